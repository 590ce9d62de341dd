"""Flat ``key = value`` experiment configs.

Lines starting with ``#`` are comments. Every key has a type and a default
(see :data:`SCHEMA`); unknown keys and unparsable values raise
:class:`~plae.train.ConfigError` naming the field. Model defaults depend on
``model.preset``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from plae import augment
from plae.augment import Policy, TransformSpec
from plae.data import load_cifar_bin, load_idx, preprocess, select_classes, synthetic_dataset
from plae.models import ArchConfig
from plae.perceptual import load_extractor, seeded_extractor
from plae.probe import ProbeSettings
from plae.train import ConfigError, Seeds, TrainConfig


def _intlist(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _strlist(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _opt_int(text):
    return None if text == "" else int(text)


SCHEMA = {
    "regime": (str, "plae"),
    "dataset": (str, "synthetic"),
    "data.train_images": (str, ""),
    "data.train_labels": (str, ""),
    "data.test_images": (str, ""),
    "data.test_labels": (str, ""),
    "data.train_files": (_strlist, ()),
    "data.test_files": (_strlist, ()),
    "data.classes": (_intlist, ()),
    "data.train_limit": (_opt_int, None),
    "data.test_limit": (_opt_int, None),
    "synthetic.classes": (int, 2),
    "synthetic.per_class": (int, 100),
    "synthetic.test_per_class": (int, 50),
    "synthetic.seed": (int, 1),
    "model.preset": (str, "desk"),
    "model.input_side": (_opt_int, None),
    "model.channels": (_intlist, ()),
    "model.kernel": (int, 4),
    "model.stride": (int, 2),
    "model.embedding_dim": (_opt_int, None),
    "model.head_hidden": (int, 128),
    "train.epochs": (int, 90),
    "train.batch_size": (int, 100),
    "train.lr": (float, 1e-3),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.999),
    "train.eps": (float, 1e-8),
    "train.eval_every": (int, 1),
    "policy": (str, "auto"),
    "perceptual": (str, "auto"),
    "perceptual.seed": (int, 0),
    "seed.init": (int, 0),
    "seed.shuffle": (int, 1),
    "seed.augment": (int, 2),
    "probe.solver": (str, "logistic"),
    "probe.lambda": (float, 1e-4),
    "probe.max_iter": (int, 500),
    "probe.seed": (int, 0),
    "output": (str, "runs/default"),
    "metrics.timing": (str, "wall"),
    "checkpoint.every": (int, 0),
    "grid.transforms": (str, "rotation,cutout,hflip"),
    "grid.epochs": (int, 30),
}

PRESETS = {
    "desk": {"model.input_side": 32, "model.channels": (16, 32), "model.embedding_dim": 32},
    "full": {"model.input_side": 64, "model.channels": (32, 64, 128), "model.embedding_dim": 300},
}


def parse_text(text: str, source: str = "<config>") -> dict:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        raw[key] = value
    return raw


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)
    source: str = "<config>"

    @classmethod
    def from_raw(cls, raw: dict, source="<config>") -> "ExperimentConfig":
        values = {k: default for k, (_, default) in SCHEMA.items()}
        for key, text in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"{source}: unknown key {key!r}")
            conv = SCHEMA[key][0]
            try:
                values[key] = conv(text)
            except ValueError:
                raise ConfigError(f"{source}: {key}: cannot parse {text!r} as {getattr(conv, '__name__', conv)}") from None
        preset = values["model.preset"]
        if preset not in PRESETS:
            raise ConfigError(f"{source}: model.preset: must be one of {', '.join(PRESETS)}, got {preset!r}")
        for key, default in PRESETS[preset].items():
            if values[key] in (None, ()):
                values[key] = default
        cfg = cls(values, source)
        cfg._check()
        return cfg

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        raw = parse_text(path.read_text(), str(path))
        for item in overrides:
            if "=" not in item:
                raise ConfigError(f"--set expects key=value, got {item!r}")
            k, v = item.split("=", 1)
            raw[k.strip()] = v.strip()
        return cls.from_raw(raw, str(path))

    def __getitem__(self, key):
        return self.values[key]

    def resolved_text(self) -> str:
        return "".join(f"{k} = {_format(self.values[k])}\n" for k in SCHEMA)

    def _check(self):
        v = self.values
        if v["regime"] not in ("bae", "pae", "sdaae", "plae", "cnn"):
            raise ConfigError(f"{self.source}: regime: unknown regime {v['regime']!r}")
        if v["dataset"] not in ("mnist", "cifar10", "svhn", "synthetic"):
            raise ConfigError(f"{self.source}: dataset: unknown dataset {v['dataset']!r}")
        if v["metrics.timing"] not in ("wall", "off"):
            raise ConfigError(f"{self.source}: metrics.timing: must be wall or off")
        for path in self.input_paths():
            if not Path(path).exists():
                raise ConfigError(f"{self.source}: dataset file not found: {path}")

    # ------------------------------------------------------------------ builders

    def input_paths(self) -> list:
        v = self.values
        if v["dataset"] == "mnist":
            keys = ("data.train_images", "data.train_labels", "data.test_images", "data.test_labels")
            missing = [k for k in keys if not v[k]]
            if missing:
                raise ConfigError(f"{self.source}: mnist needs {', '.join(missing)}")
            return [v[k] for k in keys]
        if v["dataset"] in ("cifar10", "svhn"):
            if not v["data.train_files"] or not v["data.test_files"]:
                raise ConfigError(f"{self.source}: {v['dataset']} needs data.train_files and data.test_files")
            return list(v["data.train_files"]) + list(v["data.test_files"])
        return []

    def arch(self) -> ArchConfig:
        v = self.values
        return ArchConfig(
            v["model.input_side"], tuple(v["model.channels"]), v["model.kernel"], v["model.stride"],
            v["model.embedding_dim"], v["model.head_hidden"],
        )

    def load_data(self):
        """``(train, test)`` Datasets at the model's input side."""
        v = self.values
        kind = v["dataset"]
        side = v["model.input_side"]
        if kind == "synthetic":
            train = synthetic_dataset(v["synthetic.classes"], v["synthetic.per_class"], v["synthetic.seed"])
            test = synthetic_dataset(v["synthetic.classes"], v["synthetic.test_per_class"], v["synthetic.seed"] + 10_000)
            return train.at_side(side), test.at_side(side)
        if kind == "mnist":
            tr = load_idx(v["data.train_images"], v["data.train_labels"])
            te = load_idx(v["data.test_images"], v["data.test_labels"])
        else:
            tr = load_cifar_bin(v["data.train_files"])
            te = load_cifar_bin(v["data.test_files"])
        out = []
        for (images, labels), limit in ((tr, v["data.train_limit"]), (te, v["data.test_limit"])):
            classes = v["data.classes"]
            count = len(classes) if classes else None
            if classes:
                images, labels = select_classes(images, labels, classes, limit)
            elif limit is not None:
                images, labels = images[:limit], labels[:limit]
            out.append(preprocess(images, kind, labels, count).at_side(side))
        return out[0], out[1]

    def policy(self):
        v = self.values
        name = v["policy"]
        needs = v["regime"] in ("sdaae", "plae", "cnn")
        if name == "auto":
            if not needs:
                return None
            return augment.policy_for("mnist" if v["dataset"] == "synthetic" else v["dataset"])
        if name == "none":
            return None
        if name == "identity":
            return Policy("identity", (augment.IDENTITY,), "single")
        if name in ("mnist", "cifar10", "svhn"):
            return augment.policy_for(name)
        try:
            return Policy.of("custom", [TransformSpec.parse(s) for s in name.split(",")])
        except ValueError as e:
            raise ConfigError(f"{self.source}: policy: {e}") from None

    def extractor(self):
        v = self.values
        mode = v["perceptual"]
        if mode == "auto":
            mode = "desk" if v["regime"] in ("pae", "sdaae", "plae") else "none"
        if mode == "none":
            return None
        if mode == "desk":
            return seeded_extractor(v["perceptual.seed"], "desk", input_side=v["model.input_side"])
        if mode == "alexnet":
            return seeded_extractor(v["perceptual.seed"], "full")
        if not Path(mode).exists():
            raise ConfigError(f"{self.source}: perceptual: weights file not found: {mode}")
        return load_extractor(mode)

    def probe_settings(self) -> ProbeSettings:
        v = self.values
        return ProbeSettings(v["probe.solver"], v["probe.lambda"], v["probe.max_iter"], v["probe.seed"])

    def train_config(self, checkpoint_dir=None) -> TrainConfig:
        v = self.values
        cfg = TrainConfig(
            regime=v["regime"],
            arch=self.arch(),
            epochs=v["train.epochs"],
            batch_size=v["train.batch_size"],
            lr=v["train.lr"],
            beta1=v["train.beta1"],
            beta2=v["train.beta2"],
            eps=v["train.eps"],
            policy=self.policy(),
            extractor=self.extractor(),
            seeds=Seeds(v["seed.init"], v["seed.shuffle"], v["seed.augment"]),
            eval_every=v["train.eval_every"],
            probe=self.probe_settings(),
            record_time=v["metrics.timing"] == "wall",
            checkpoint_every=v["checkpoint.every"],
            checkpoint_dir=checkpoint_dir,
        )
        try:
            cfg.validate()
        except ConfigError as e:
            raise ConfigError(f"{self.source}: {e}") from None
        except ValueError as e:
            raise ConfigError(f"{self.source}: model: {e}") from None
        return cfg


def blob_sha1(path) -> str:
    """Git-style content hash (``sha1("blob <len>\\0" + bytes)``)."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

