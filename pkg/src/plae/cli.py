"""``plae`` command line: train / eval / grid.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from plae import __version__, _accel
from plae.augment import PAIR_ORDER
from plae.autodiff.checkpoint import CheckpointError, load_arrays, save_checkpoint
from plae.config import ExperimentConfig, _format, blob_sha1
from plae.grid import grid_search, parse_kinds
from plae.models import build_autoencoder, parameter_count
from plae.probe import ProbeSettings, evaluate_encoder, export_encodings
from plae.train import ConfigError, best_fit_line, train

log = logging.getLogger("plae")

METRICS_HEADER = "epoch,regime,dataset,embedding_dim,loss,probe_accuracy,seconds"


def metrics_csv(metrics, regime, dataset, embedding_dim) -> str:
    lines = [METRICS_HEADER]
    for m in metrics:
        acc = "" if m.probe_accuracy is None else repr(m.probe_accuracy)
        lines.append(f"{m.epoch},{regime},{dataset},{embedding_dim},{m.loss!r},{acc},{m.seconds:.3f}")
    return "\n".join(lines) + "\n"


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.set or [])
    for flag in ("regime", "policy", "output"):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"{flag}={value}")
    return ExperimentConfig.load(args.config, overrides)


def _manifest(cfg: ExperimentConfig, config_path, extra=None) -> dict:
    inputs = {str(config_path): blob_sha1(config_path)}
    for p in cfg.input_paths():
        inputs[str(p)] = blob_sha1(p)
    out = {
        "version": __version__,
        "kernel_backend": _accel.backend_name(),
        "inputs_sha1": inputs,
        "rescale": "bilinear",
        "pair_order": PAIR_ORDER,
        "probe_standardize": True,
    }
    out.update(extra or {})
    return out


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    tcfg = cfg.train_config(checkpoint_dir=out)
    train_set, test_set = cfg.load_data()
    result = train(tcfg, train_set, test_set)
    regime = cfg["regime"]
    _write(out / "metrics.csv", metrics_csv(result.metrics, regime, cfg["dataset"], tcfg.arch.embedding_dim))
    try:
        m, k = best_fit_line(result.metrics)
        fit = {"m": m, "k": k}
    except ValueError:
        fit = {"m": None, "k": None}
    _write(out / "best_fit.json", json.dumps(fit) + "\n")
    save_checkpoint(out / "final.plae", result.parameters, result.optimizer)
    _write(out / "config.resolved", cfg.resolved_text())
    extra = {
        "regime": regime,
        "steps": result.steps,
        "label_reads_during_training": result.label_reads,
        "parameter_count": parameter_count(result.parameters),
        "probe": tcfg.probe.to_dict(),
        "extractor_sha256": tcfg.extractor.checksum() if tcfg.extractor else None,
        "policy": str(tcfg.policy) if tcfg.policy else None,
    }
    _write(out / "manifest.json", json.dumps(_manifest(cfg, args.config, extra), indent=2, sort_keys=True) + "\n")
    last = result.metrics[-1]
    print(f"trained {regime}: {len(result.metrics)} epochs, final loss {last.loss:.6g}, accuracy {last.probe_accuracy}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    arch = cfg.arch()
    try:
        arrays = load_arrays(args.checkpoint)
    except (OSError, CheckpointError) as e:
        raise ConfigError(f"cannot read checkpoint: {e}") from None
    encoder, _ = build_autoencoder(arch, 0)
    for name, p in encoder.params.items():
        key = f"encoder.{name}"
        if key not in arrays:
            raise ConfigError(f"checkpoint lacks {key}; architecture does not match")
        if arrays[key].shape != p.data.shape:
            raise ConfigError(f"checkpoint {key} has shape {arrays[key].shape}, architecture expects {p.data.shape}")
        p.data[...] = arrays[key]
    settings = cfg.probe_settings()
    if args.probe_seed is not None:
        settings = ProbeSettings(settings.solver, settings.lam, settings.max_iter, args.probe_seed)
    train_set, test_set = cfg.load_data()
    acc = evaluate_encoder(encoder, train_set, test_set, settings)
    report = {"accuracy": acc, "probe": settings.to_dict()}
    text = json.dumps(report, sort_keys=True)
    print(text)
    dest = Path(args.out) if args.out else Path(args.checkpoint).with_name("eval.json")
    _write(dest, text + "\n")
    if args.export_encodings:
        root = Path(args.export_encodings)
        root.mkdir(parents=True, exist_ok=True)
        export_encodings(encoder, train_set, root / "train.enc")
        export_encodings(encoder, test_set, root / "test.enc")
    return 0


def cmd_grid(args) -> int:
    cfg = _load_config(args)
    out = Path(cfg["output"])
    kinds = parse_kinds(cfg["grid.transforms"])
    base = ExperimentConfig.from_raw({**{k: _format(v) for k, v in cfg.values.items()}, "regime": "plae", "policy": "identity"}, cfg.source)
    tcfg = base.train_config()
    train_set, test_set = cfg.load_data()
    result = grid_search(train_set, test_set, tcfg, kinds, epochs=cfg["grid.epochs"], jobs=args.jobs, dataset=cfg["dataset"])
    _write(out / "grid.csv", result.to_csv())
    _write(out / "ranked.csv", result.ranked_csv())
    _write(out / "top10.txt", "\n".join(result.top(10)) + "\n")
    _write(out / "config.resolved", cfg.resolved_text())
    extra = {
        "grid_runs": len(result.specs),
        "grid_epochs": cfg["grid.epochs"],
        "kinds": kinds,
        "label_reads_during_training": sum(result.label_reads.values()),
    }
    _write(out / "manifest.json", json.dumps(_manifest(cfg, args.config, extra), indent=2, sort_keys=True) + "\n")
    print(result.to_csv(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plae", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="key=value experiment config")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    p = sub.add_parser("train", help="train one regime and write metrics/checkpoint")
    common(p)
    p.add_argument("--regime")
    p.add_argument("--policy")
    p.add_argument("--output")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="linear-probe accuracy of a checkpoint's encoder")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probe-seed", type=int)
    p.add_argument("--out", help="report path (default: eval.json next to the checkpoint)")
    p.add_argument("--export-encodings", metavar="DIR", help="also write train/test encodings with label sidecars")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="augmentation grid search")
    common(p)
    p.add_argument("--output")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_grid)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"plae: config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - top-level reporter
        log.debug("failure", exc_info=True)
        print(f"plae: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

