"""Training regimes over the shared backbone.

=======  =====================  ==============================
regime   encoder input          loss
=======  =====================  ==============================
bae      x                      mse(x', x)
pae      x                      mse(p(x'), p(x))
sdaae    f = t(x)               mse(p(x'), p(f))
plae     f = t(x)               mse(p(x'), p(x))   (clean target)
cnn      t(x)                   cross_entropy(head(encoder(t(x))), y)
=======  =====================  ==============================

``t`` is drawn per image per epoch from the policy, ``p`` is the frozen
perceptual extractor. Only ``cnn`` reads labels while training.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from plae.augment import Policy, augment_batch
from plae.autodiff import Adam, Graph, Tensor, cross_entropy, mse
from plae.autodiff.checkpoint import save_checkpoint
from plae.data import Dataset
from plae.models import ArchConfig, autoencoder_parameters, build_autoencoder, build_cnn, encode
from plae.perceptual import PerceptualExtractor, extract
from plae.probe import ProbeSettings, fit_probe, probe_accuracy

log = logging.getLogger(__name__)

REGIMES = ("bae", "pae", "sdaae", "plae", "cnn")
UNSUPERVISED = ("bae", "pae", "sdaae", "plae")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Seeds:
    init: int = 0
    shuffle: int = 1
    augment: int = 2


@dataclass
class TrainConfig:
    regime: str
    arch: ArchConfig
    epochs: int = 90
    batch_size: int = 100
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    policy: Optional[Policy] = None
    extractor: Optional[PerceptualExtractor] = None
    seeds: Seeds = field(default_factory=Seeds)
    eval_every: int = 1
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    record_time: bool = True
    checkpoint_every: int = 0
    checkpoint_dir: Optional[Path] = None

    def validate(self):
        r = self.regime
        if r not in REGIMES:
            raise ConfigError(f"regime must be one of {', '.join(REGIMES)}, got {r!r}")
        wants_extractor = r in ("pae", "sdaae", "plae")
        wants_policy = r in ("sdaae", "plae", "cnn")
        if wants_extractor != (self.extractor is not None):
            raise ConfigError(f"regime {r} {'requires' if wants_extractor else 'does not use'} a perceptual extractor")
        if wants_policy != (self.policy is not None):
            raise ConfigError(f"regime {r} {'requires' if wants_policy else 'does not use'} an augmentation policy")
        if self.epochs < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size and eval_every must be positive")
        self.arch.sides()


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    probe_accuracy: Optional[float]
    seconds: float


@dataclass
class BatchLoss:
    loss: Tensor
    inputs: np.ndarray  # what the encoder saw
    target: np.ndarray  # what the reconstruction is compared against (pre-extractor)
    specs: list


@dataclass
class TrainResult:
    encoder: object
    decoder: object
    head: object
    metrics: list
    label_reads: int
    optimizer: Adam
    steps: int

    @property
    def parameters(self) -> dict:
        if self.head is not None:
            return self.head.parameters()
        return autoencoder_parameters(self.encoder, self.decoder)


def loss_for(
    regime: str,
    x: np.ndarray,
    encoder,
    decoder=None,
    extractor: Optional[PerceptualExtractor] = None,
    policy: Optional[Policy] = None,
    rng_key: tuple = (0, 0, 0),
    labels=None,
    head=None,
) -> BatchLoss:
    """Batch loss for one regime. ``rng_key`` is ``(augment_seed, epoch, batch)``."""
    specs = []
    if regime in ("sdaae", "plae", "cnn"):
        if policy is None:
            raise ConfigError(f"regime {regime} needs a policy")
        inputs, specs = augment_batch(policy, x, *rng_key)
    elif regime in ("bae", "pae"):
        inputs = x
    else:
        raise ConfigError(f"unknown regime {regime!r}")

    if regime == "cnn":
        if head is None or labels is None:
            raise ConfigError("cnn regime needs a classifier and labels")
        return BatchLoss(cross_entropy(head(Tensor(inputs)), labels), inputs, x, specs)

    recon = decoder(encoder(Tensor(inputs)))
    if regime == "bae":
        return BatchLoss(mse(recon, Tensor(x)), inputs, x, specs)
    if extractor is None:
        raise ConfigError(f"regime {regime} needs a perceptual extractor")
    # sdaae reconstructs its own augmented input; plae reconstructs the clean image
    target = inputs if regime == "sdaae" else x
    loss = mse(extract(extractor, recon), extract(extractor, Tensor(target)))
    return BatchLoss(loss, inputs, target, specs)


def steps_per_epoch(n: int, batch_size: int) -> int:
    return math.ceil(n / batch_size)


def _evaluate(config: TrainConfig, encoder, head, train: Dataset, test: Dataset) -> float:
    if config.regime == "cnn":
        logits = np.concatenate(
            [head(Tensor(test.images[i : i + 256])).data for i in range(0, len(test), 256)]
        )
        return float(np.mean(np.argmax(logits, axis=1) == test.labels))
    tr = encode(encoder, train.images)
    te = encode(encoder, test.images)
    probe = fit_probe(tr, train.labels, config.probe, class_count=train.class_count)
    return probe_accuracy(probe, te, test.labels)


def train(config: TrainConfig, data: Dataset, test: Optional[Dataset] = None, on_epoch=None) -> TrainResult:
    """Run ``config.epochs`` epochs of Adam over shuffled minibatches.

    The last partial batch is kept. When ``test`` is given, probe accuracy is
    measured every ``eval_every`` epochs and after the final epoch.
    """
    config.validate()
    n = len(data)
    if n == 0:
        raise ConfigError("training set is empty")
    if config.batch_size > n:
        raise ConfigError(f"batch size {config.batch_size} exceeds dataset size {n}")
    if data.side != config.arch.input_side:
        raise ConfigError(f"data side {data.side} != model input side {config.arch.input_side}")

    view = data.unlabelled_view()
    regime = config.regime
    if regime == "cnn":
        head = build_cnn(config.arch, data.class_count, config.seeds.init)
        encoder, decoder = head.encoder, None
        params = head.parameters()
    else:
        head = None
        encoder, decoder = build_autoencoder(config.arch, config.seeds.init)
        params = autoencoder_parameters(encoder, decoder)
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    shuffle_rng = np.random.default_rng(config.seeds.shuffle)
    metrics = []
    steps = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = perm[start : start + config.batch_size]
            x = view.images[idx]
            labels = view.labels[idx] if regime == "cnn" else None
            opt.zero_grad()
            with Graph() as g:
                bl = loss_for(
                    regime, x, encoder, decoder, config.extractor, config.policy,
                    (config.seeds.augment, epoch, b), labels, head,
                )
            g.backward(bl.loss)
            opt.step()
            steps += 1
            total += float(bl.loss.data) * len(idx)
        acc = None
        if test is not None and (epoch % config.eval_every == 0 or epoch == config.epochs):
            acc = _evaluate(config, encoder, head, data, test)
        seconds = time.perf_counter() - t0 if config.record_time else 0.0
        m = EpochMetrics(epoch, total / n, acc, seconds)
        metrics.append(m)
        log.info("epoch %d loss %.6f acc %s", epoch, m.loss, acc)
        if on_epoch is not None:
            on_epoch(m)
        if config.checkpoint_every and config.checkpoint_dir and epoch % config.checkpoint_every == 0:
            save_checkpoint(Path(config.checkpoint_dir) / f"epoch{epoch:04d}.plae", params, opt)
    return TrainResult(encoder, decoder, head, metrics, view.label_reads, opt, steps)


def fit_line(xs, ys):
    """Ordinary least squares ``y = m x + k``."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("need at least 2 points for a line of best fit")
    xm, ym = x.mean(), y.mean()
    sxx = np.sum((x - xm) ** 2)
    if sxx == 0:
        raise ValueError("all points share one x value")
    m = float(np.sum((x - xm) * (y - ym)) / sxx)
    return m, float(ym - m * xm)


def best_fit_line(metrics) -> tuple:
    """Slope and intercept of probe accuracy (in %) against epoch index."""
    pts = [(m.epoch, 100.0 * m.probe_accuracy) for m in metrics if m.probe_accuracy is not None]
    if len(pts) < 2:
        raise ValueError(f"need at least 2 evaluated epochs, got {len(pts)}")
    xs, ys = zip(*pts)
    return fit_line(xs, ys)


def with_overrides(config: TrainConfig, **kw) -> TrainConfig:
    return replace(config, **kw)
