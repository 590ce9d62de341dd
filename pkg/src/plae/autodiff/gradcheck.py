"""Central finite-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from plae.autodiff.tensor import Graph, Tensor, branch_trace


class KinkError(RuntimeError):
    pass


def _traced(fn):
    with branch_trace() as log:
        value = fn().item()
    return value, log


def numeric_grad(fn: Callable[[], Tensor], t: Tensor, h=1e-3, coords=None, skip_kinks=True) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``t``.

    Entries not sampled are ``nan``. With ``skip_kinks``, an entry whose +h or
    -h evaluation takes a different relu/maxpool branch than the base point is
    retried with the step shrunk 10x and 100x, and left ``nan`` if the stencil
    still crosses a kink: the loss is not differentiable across that step.
    """
    flat = t.data.reshape(-1)
    out = np.full(flat.shape, np.nan)
    idx = range(flat.size) if coords is None else coords
    _, base = _traced(fn)
    steps = (h, h / 10, h / 100) if skip_kinks else (h,)
    for i in idx:
        old = flat[i]
        for step in steps:
            flat[i] = old + step
            fp, bp = _traced(fn)
            flat[i] = old - step
            fm, bm = _traced(fn)
            flat[i] = old
            if not skip_kinks or (bp == base and bm == base):
                out[i] = (fp - fm) / (2 * step)
                break
    return out.reshape(t.shape)


def max_relative_error(analytic, numeric, floor=1e-8) -> float:
    """Worst relative error, ignoring entries whose absolute error is below ``floor``.

    Entries far smaller than the tensor's largest gradient are measured
    against 1e-3 of that largest value, so finite-difference truncation on a
    near-zero entry does not dominate.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    diff = np.abs(a - n)
    scale = 1e-3 * np.max(np.abs(a)) if a.size else 0.0
    rel = diff / np.maximum(np.maximum(np.abs(a), np.abs(n)), max(scale, 1e-300))
    rel = np.where(diff < floor, 0.0, rel)
    return float(rel.max()) if rel.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor], inputs: Sequence[Tensor], h=1e-3, samples: int | None = None, seed=0
) -> float:
    """Max relative error between backprop and finite differences over ``inputs``.

    ``fn`` must rebuild the forward pass from the current ``.data`` of the
    inputs on every call. With ``samples`` set, only that many coordinates per
    input are probed. Coordinates whose stencil crosses a kink are skipped;
    :class:`KinkError` is raised if that leaves fewer than half of them.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors (build them under shadow_mode())")
        t.grad = None
    with Graph() as g:
        loss = fn()
    g.backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        coords = None
        if samples is not None and t.data.size > samples:
            coords = rng.choice(t.data.size, size=samples, replace=False)
        num = numeric_grad(fn, t, h, coords)
        probed = t.data.size if coords is None else len(coords)
        kept = int(np.count_nonzero(~np.isnan(num)))
        if kept * 2 < probed:
            raise KinkError(f"only {kept}/{probed} coordinates are kink-free at h={h}")
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, max_relative_error(ana, num))
    return worst
