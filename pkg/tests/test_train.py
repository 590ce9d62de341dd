import math
from dataclasses import replace

import numpy as np
import pytest

from plae.augment import IDENTITY, Policy, Transform, TransformSpec, policy_for
from plae.autodiff import Tensor
from plae.data import synthetic_dataset
from plae.models import build_autoencoder, desk_arch
from plae.perceptual import extract, seeded_extractor
from plae.train import (
    ConfigError,
    EpochMetrics,
    TrainConfig,
    best_fit_line,
    fit_line,
    loss_for,
    steps_per_epoch,
    train,
)

ARCH = desk_arch(16, 32)


@pytest.fixture(scope="module")
def data():
    return synthetic_dataset(2, 30, seed=1).at_side(32), synthetic_dataset(2, 10, seed=2).at_side(32)


def cfg(regime, **kw):
    ext = seeded_extractor(0, "desk", input_side=32) if regime in ("pae", "sdaae", "plae") else None
    pol = policy_for("mnist") if regime in ("sdaae", "plae", "cnn") else None
    base = dict(regime=regime, arch=ARCH, epochs=2, batch_size=25, extractor=ext, policy=pol, record_time=False)
    base.update(kw)
    return TrainConfig(**base)


def batch(seed=0, n=4):
    return np.random.default_rng(seed).uniform(0.05, 1, (n, 3, 32, 32)).astype(np.float32)


# ---------------------------------------------------------------- config validation


@pytest.mark.parametrize(
    "regime,extractor,policy",
    [("bae", True, False), ("bae", False, True), ("pae", False, False), ("pae", True, True),
     ("sdaae", True, False), ("plae", False, True), ("cnn", True, True), ("cnn", False, False)],
)
def test_regime_config_mismatch_rejected(regime, extractor, policy):
    c = TrainConfig(
        regime, ARCH,
        extractor=seeded_extractor(0, "desk", 32) if extractor else None,
        policy=policy_for("mnist") if policy else None,
    )
    with pytest.raises(ConfigError):
        c.validate()


def test_unknown_regime():
    with pytest.raises(ConfigError):
        TrainConfig("vae", ARCH).validate()


def test_empty_and_oversized_batch_rejected(data):
    train_set, _ = data
    with pytest.raises(ConfigError):
        train(cfg("bae", batch_size=61), train_set)
    with pytest.raises(ConfigError):
        train(cfg("bae"), train_set.subset([]))


def test_side_mismatch_rejected():
    with pytest.raises(ConfigError):
        train(cfg("bae"), synthetic_dataset(2, 5, seed=0))


# ---------------------------------------------------------------- loss_for


def test_plae_identity_loss_equals_pae_bitwise():
    enc, dec = build_autoencoder(ARCH, 0)
    ext = seeded_extractor(0, "desk", 32)
    x = batch()
    a = loss_for("pae", x, enc, dec, ext)
    b = loss_for("plae", x, enc, dec, ext, Policy("identity", (IDENTITY,)), (2, 1, 0))
    assert a.loss.data.tobytes() == b.loss.data.tobytes()


def test_loss_targets_are_clean_for_plae_and_augmented_for_sdaae():
    enc, dec = build_autoencoder(ARCH, 0)
    ext = seeded_extractor(0, "desk", 32)
    x = batch(1)
    pol = policy_for("cifar10")
    pl = loss_for("plae", x, enc, dec, ext, pol, (5, 1, 0))
    sd = loss_for("sdaae", x, enc, dec, ext, pol, (5, 1, 0))
    assert pl.target is x
    assert sd.target is sd.inputs
    assert pl.inputs.tobytes() == sd.inputs.tobytes()
    assert pl.specs == sd.specs


def test_full_cutout_separates_sdaae_from_plae():
    enc, dec = build_autoencoder(ARCH, 0)
    ext = seeded_extractor(0, "desk", 32)
    x = batch(2)
    wipe = Policy("wipe", (TransformSpec(Transform.make("cutout", size=32)),))
    sd = loss_for("sdaae", x, enc, dec, ext, wipe, (0, 1, 0))
    pl = loss_for("plae", x, enc, dec, ext, wipe, (0, 1, 0))
    assert np.all(sd.inputs == 0)
    assert np.any(extract(ext, Tensor(x)).data != extract(ext, Tensor(np.zeros_like(x))).data)
    assert sd.loss.item() != pl.loss.item()


def test_bae_perfect_reconstruction_is_zero():
    enc, _ = build_autoencoder(ARCH, 0)
    x = batch(3)
    assert loss_for("bae", x, enc, lambda z: Tensor(x)).loss.item() == 0.0


def test_cnn_loss_needs_labels():
    with pytest.raises(ConfigError):
        loss_for("cnn", batch(), None, policy=policy_for("mnist"))


# ---------------------------------------------------------------- train loop


def test_step_count_and_partial_batch(data):
    train_set, _ = data
    res = train(cfg("bae", epochs=3, batch_size=25), train_set)
    assert steps_per_epoch(60, 25) == 3
    assert res.steps == 3 * math.ceil(60 / 25)
    assert res.optimizer.t == res.steps


def test_training_is_bit_reproducible(data):
    train_set, test_set = data
    a = train(cfg("plae"), train_set, test_set)
    b = train(cfg("plae"), train_set, test_set)
    assert [(m.loss, m.probe_accuracy) for m in a.metrics] == [(m.loss, m.probe_accuracy) for m in b.metrics]
    pa, pb = a.parameters, b.parameters
    assert all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)


def test_plae_identity_reproduces_pae_trajectory(data):
    train_set, test_set = data
    pae = train(cfg("pae"), train_set, test_set)
    plae = train(cfg("plae", policy=Policy("identity", (IDENTITY,))), train_set, test_set)
    assert [m.loss for m in pae.metrics] == [m.loss for m in plae.metrics]
    assert [m.probe_accuracy for m in pae.metrics] == [m.probe_accuracy for m in plae.metrics]
    pa, pb = pae.parameters, plae.parameters
    assert all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)


@pytest.mark.parametrize("regime", ["bae", "pae", "sdaae", "plae"])
def test_unsupervised_regimes_read_no_labels(data, regime):
    train_set, test_set = data
    res = train(cfg(regime, epochs=1), train_set, test_set)
    assert res.label_reads == 0


def test_cnn_reads_labels_once_per_batch(data):
    train_set, test_set = data
    res = train(cfg("cnn", epochs=2, batch_size=20), train_set, test_set)
    assert res.label_reads == 2 * 3


def test_extractor_frozen_through_training(data):
    train_set, _ = data
    c = cfg("plae")
    before = c.extractor.checksum()
    train(c, train_set)
    assert c.extractor.checksum() == before


def test_eval_cadence_includes_final_epoch(data):
    train_set, test_set = data
    res = train(cfg("bae", epochs=5, eval_every=2), train_set, test_set)
    assert [m.epoch for m in res.metrics if m.probe_accuracy is not None] == [2, 4, 5]
    assert all(m.loss >= 0 for m in res.metrics)
    assert all(0 <= m.probe_accuracy <= 1 for m in res.metrics if m.probe_accuracy is not None)


def test_timing_off_records_zero(data):
    train_set, _ = data
    assert all(m.seconds == 0.0 for m in train(cfg("bae", epochs=1), train_set).metrics)


def test_checkpoints_written(data, tmp_path):
    train_set, _ = data
    train(cfg("bae", epochs=2, checkpoint_every=1, checkpoint_dir=tmp_path), train_set)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["epoch0001.plae", "epoch0002.plae"]


def test_on_epoch_callback(data):
    seen = []
    train(cfg("bae", epochs=2), data[0], on_epoch=seen.append)
    assert [m.epoch for m in seen] == [1, 2]


# ---------------------------------------------------------------- best-fit line


def metrics(points):
    return [EpochMetrics(e, 0.0, a / 100, 0.0) for e, a in points]


def test_best_fit_two_points():
    m, k = best_fit_line(metrics([(0, 1), (1, 3)]))
    assert abs(m - 2) < 1e-9 and abs(k - 1) < 1e-9


def test_best_fit_constant():
    m, k = best_fit_line(metrics([(e, 50) for e in range(10)]))
    assert abs(m) < 1e-9 and abs(k - 50) < 1e-9


def test_best_fit_three_points():
    m, k = best_fit_line(metrics([(0, 0), (1, 1), (2, 4)]))
    assert abs(m - 2) < 1e-9 and abs(k + 1 / 3) < 1e-9


def test_best_fit_skips_unevaluated_and_needs_two_points():
    ms = metrics([(1, 10), (2, 20)]) + [EpochMetrics(3, 0.0, None, 0.0)]
    assert best_fit_line(ms) == pytest.approx((10.0, 0.0))
    with pytest.raises(ValueError):
        best_fit_line(metrics([(1, 10)]))
    with pytest.raises(ValueError):
        fit_line([2, 2], [1, 3])


def test_fit_line_matches_polyfit():
    rng = np.random.default_rng(0)
    xs = np.arange(1, 31)
    ys = 60 + 0.3 * xs + rng.normal(0, 2, size=30)
    m, k = fit_line(xs, ys)
    pm, pk = np.polyfit(xs, ys, 1)
    assert abs(m - pm) < 1e-9 and abs(k - pk) < 1e-9


def test_with_replace_keeps_config_valid():
    c = replace(cfg("plae"), epochs=1)
    c.validate()
