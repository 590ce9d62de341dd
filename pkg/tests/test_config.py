from pathlib import Path

import pytest

from plae.augment import IDENTITY, policy_for
from plae.config import SCHEMA, ExperimentConfig, blob_sha1, parse_text
from plae.models import desk_arch, full_arch
from plae.train import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_parse_text_comments_and_whitespace():
    raw = parse_text("# header\n  regime =  bae  # trailing\n\ntrain.epochs=3\n")
    assert raw == {"regime": "bae", "train.epochs": "3"}


def test_parse_text_rejects_line_without_equals():
    with pytest.raises(ConfigError, match=r"<config>:2"):
        parse_text("regime = bae\nbogus\n")


def test_defaults_fill_every_key():
    cfg = ExperimentConfig.from_raw({})
    assert set(cfg.values) == set(SCHEMA)
    assert cfg.arch() == desk_arch(32, 32)


def test_full_preset_and_explicit_override():
    assert ExperimentConfig.from_raw({"model.preset": "full"}).arch() == full_arch(300)
    cfg = ExperimentConfig.from_raw({"model.preset": "full", "model.embedding_dim": "64"})
    assert cfg.arch().embedding_dim == 64 and cfg.arch().channels == (32, 64, 128)


@pytest.mark.parametrize(
    "key,value",
    [("train.epochs", "ten"), ("train.lr", "fast"), ("data.classes", "0,x"), ("model.preset", "huge"),
     ("regime", "gan"), ("dataset", "imagenet"), ("metrics.timing", "cpu"), ("nosuch.key", "1")],
)
def test_bad_values_name_the_field(key, value):
    with pytest.raises(ConfigError, match=key.split(".")[0]):
        ExperimentConfig.from_raw({key: value})


def test_load_overrides_win(tmp_path):
    path = tmp_path / "a.cfg"
    path.write_text("regime = bae\ntrain.epochs = 4\n")
    cfg = ExperimentConfig.load(path, ["train.epochs=7", "regime = pae"])
    assert (cfg["regime"], cfg["train.epochs"]) == ("pae", 7)
    with pytest.raises(ConfigError, match="key=value"):
        ExperimentConfig.load(path, ["train.epochs"])
    with pytest.raises(ConfigError, match="not found"):
        ExperimentConfig.load(tmp_path / "missing.cfg")


def test_resolved_text_round_trips():
    cfg = ExperimentConfig.from_raw({"regime": "sdaae", "data.classes": "1,7", "train.lr": "0.0005"})
    again = ExperimentConfig.from_raw(parse_text(cfg.resolved_text()))
    assert again.values == cfg.values
    assert again.resolved_text() == cfg.resolved_text()


@pytest.mark.parametrize(
    "regime,policy,expected",
    [
        ("bae", "auto", None),
        ("pae", "auto", None),
        ("plae", "auto", "mnist"),
        ("cnn", "svhn", "svhn"),
        ("plae", "none", None),
    ],
)
def test_policy_resolution(regime, policy, expected):
    got = ExperimentConfig.from_raw({"regime": regime, "policy": policy}).policy()
    if expected is None:
        assert got is None
    else:
        assert got == policy_for(expected)


def test_identity_and_custom_policies():
    cfg = ExperimentConfig.from_raw({"policy": "identity"})
    assert cfg.policy().specs == (IDENTITY,)
    custom = ExperimentConfig.from_raw({"policy": "hflip,rotation+cutout"}).policy()
    assert [s.name for s in custom.specs] == ["hflip", "rotation+cutout"]
    with pytest.raises(ConfigError, match="policy"):
        ExperimentConfig.from_raw({"policy": "teleport"}).policy()


def test_extractor_follows_regime():
    assert ExperimentConfig.from_raw({"regime": "bae"}).extractor() is None
    ext = ExperimentConfig.from_raw({"regime": "pae", "perceptual.seed": "3"}).extractor()
    assert ext is not None
    with pytest.raises(ConfigError, match="weights file not found"):
        ExperimentConfig.from_raw({"perceptual": "/nonexistent/w.plxd"}).extractor()


def test_regime_extractor_mismatch_is_config_error():
    with pytest.raises(ConfigError, match="perceptual"):
        ExperimentConfig.from_raw({"regime": "bae", "perceptual": "desk"}).train_config()


def test_mnist_requires_all_paths():
    with pytest.raises(ConfigError, match="data.test_labels"):
        ExperimentConfig.from_raw({"dataset": "mnist", "data.train_images": __file__,
                                   "data.train_labels": __file__, "data.test_images": __file__})


def test_blob_sha1_matches_git(tmp_path):
    p = tmp_path / "f"
    p.write_bytes(b"hello\n")
    assert blob_sha1(p) == "ce013625030ba8dba906f756967f9e9ca394464a"


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.cfg")), ids=lambda p: p.name)
def test_shipped_configs_resolve(path, mnist_idx):
    raw = parse_text(path.read_text(), str(path))
    assert set(raw) <= set(SCHEMA)
    if raw.get("dataset") == "mnist":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            raw[f"data.{key}"] = str(mnist_idx[key])
    if raw.get("dataset") in ("cifar10", "svhn"):
        raw["data.train_files"] = raw["data.test_files"] = __file__  # existence only
    cfg = ExperimentConfig.from_raw(raw, str(path))
    tcfg = cfg.train_config()
    assert tcfg.epochs >= 1
