"""Linear-probe evaluation of frozen encodings.

Fit a linear classifier on training-split encodings, score it on the test
split. The default solver is multinomial logistic regression with L2
``lam = 1e-4``, minimised by full-batch Nesterov-accelerated gradient descent
(step ``1/L`` from the spectral norm of the data) for at most ``max_iter``
iterations. ``solver="svm"`` swaps in a one-vs-rest hinge-loss model trained
by averaged subgradient descent. Encodings are standardised with training
statistics first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from plae.models import Encoder, encode


class ProbeError(ValueError):
    pass


@dataclass(frozen=True)
class ProbeSettings:
    solver: str = "logistic"
    lam: float = 1e-4
    max_iter: int = 500
    seed: int = 0
    standardize: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LinearProbe:
    weight: np.ndarray  # [d, C]
    bias: np.ndarray  # [C]
    mean: np.ndarray
    scale: np.ndarray
    settings: ProbeSettings

    def scores(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return ((x - self.mean) / self.scale) @ self.weight + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        # argmax returns the first maximum: ties go to the lowest class index
        return np.argmax(self.scores(x), axis=1)


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _fit_logistic(xa, onehot, lam, max_iter, w0):
    n = xa.shape[0]
    lip = 0.5 * np.linalg.norm(xa, 2) ** 2 / n + lam
    step = 1.0 / lip
    reg = np.ones((xa.shape[1], 1))
    reg[-1] = 0  # bias row is not regularised
    w = w0
    prev = w0
    for k in range(1, max_iter + 1):
        y = w + (k - 1) / (k + 2) * (w - prev)
        grad = xa.T @ (_softmax(xa @ y) - onehot) / n + lam * reg * y
        prev, w = w, y - step * grad
    return w


def _fit_svm(xa, labels, classes, lam, max_iter, w0):
    n = xa.shape[0]
    sign = np.where(labels[:, None] == np.arange(classes)[None, :], 1.0, -1.0)
    reg = np.ones((xa.shape[1], 1))
    reg[-1] = 0
    eta0 = 1.0 / max(np.mean(np.sum(xa * xa, axis=1)), 1e-12)
    w = w0
    avg = np.zeros_like(w0)
    for t in range(1, max_iter + 1):
        margin = sign * (xa @ w)
        active = (margin < 1).astype(np.float64)
        grad = -xa.T @ (active * sign) / n + lam * reg * w
        w = w - eta0 / np.sqrt(t) * grad
        avg += (w - avg) / t
    return avg


def fit_probe(encodings, labels, settings: ProbeSettings = ProbeSettings(), class_count: int | None = None) -> LinearProbe:
    x = np.asarray(encodings, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    if x.ndim != 2 or len(x) != len(y):
        raise ProbeError(f"encodings {x.shape} and labels {y.shape} disagree")
    if len(np.unique(y)) < 2:
        raise ProbeError("probe training set contains a single class")
    classes = int(class_count or y.max() + 1)
    if settings.standardize:
        mean = x.mean(axis=0)
        scale = x.std(axis=0)
        scale = np.where(scale > 0, scale, 1.0)
    else:
        mean = np.zeros(x.shape[1])
        scale = np.ones(x.shape[1])
    xs = (x - mean) / scale
    xa = np.hstack([xs, np.ones((len(xs), 1))])
    rng = np.random.default_rng(settings.seed)
    w0 = np.vstack([rng.normal(0, 0.01, size=(x.shape[1], classes)), np.zeros((1, classes))])
    if settings.solver == "logistic":
        onehot = np.eye(classes)[y]
        w = _fit_logistic(xa, onehot, settings.lam, settings.max_iter, w0)
    elif settings.solver == "svm":
        w = _fit_svm(xa, y, classes, settings.lam, settings.max_iter, w0)
    else:
        raise ProbeError(f"unknown probe solver {settings.solver!r}")
    return LinearProbe(w[:-1], w[-1], mean, scale, settings)


def probe_accuracy(probe: LinearProbe, encodings, labels) -> float:
    x = np.asarray(encodings)
    y = np.asarray(labels)
    if len(y) == 0:
        raise ProbeError("empty test set")
    if x.ndim != 2 or x.shape[1] != probe.weight.shape[0] or len(x) != len(y):
        raise ProbeError(f"test encodings {x.shape} do not match probe input dim {probe.weight.shape[0]}")
    return float(np.mean(probe.predict(x) == y))


def encode_split(encoder: Encoder, dataset):
    """Encode a whole split without augmentation; labels pass through untouched."""
    return encode(encoder, dataset.images), dataset.labels


def export_encodings(encoder: Encoder, dataset, path) -> tuple:
    """Write ``encodings`` as a PLAE1 checkpoint plus an IDX label sidecar.

    Returns ``(encodings path, labels path)``; the sidecar is ``<path>.labels``.
    """
    from plae.autodiff.checkpoint import save_arrays
    from plae.data import write_label_idx

    path = Path(path)
    z, labels = encode_split(encoder, dataset)
    save_arrays(path, {"encodings": z})
    sidecar = path.with_name(path.name + ".labels")
    write_label_idx(sidecar, labels)
    return path, sidecar


def evaluate_encoder(encoder: Encoder, train, test, settings: ProbeSettings = ProbeSettings()) -> float:
    """Fit on ``train`` encodings, score on ``test`` encodings."""
    tr_x, tr_y = encode_split(encoder, train)
    te_x, te_y = encode_split(encoder, test)
    probe = fit_probe(tr_x, tr_y, settings, class_count=train.class_count)
    return probe_accuracy(probe, te_x, te_y)
