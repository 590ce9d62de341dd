from __future__ import annotations

from typing import Mapping

import numpy as np

from plae.autodiff.tensor import Tensor


class Adam:
    """Adam with bias correction. Moment buffers are keyed by parameter name.

    ``eps`` defaults to 1e-8, the usual published value.
    """

    def __init__(self, params: Mapping[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise ValueError(f"adam_step: no gradient for {', '.join(missing)}")
        self.t += 1
        adam_step(self.params, self.m, self.v, self.t, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params, m, v, t, lr, beta1, beta2, eps):
    """In-place Adam update of every tensor in ``params`` at step ``t`` (1-based)."""
    if t < 1:
        raise ValueError(f"step counter must be >= 1, got {t}")
    bc1 = 1 - beta1**t
    bc2 = 1 - beta2**t
    for k, p in params.items():
        g = p.grad
        if g is None:
            raise ValueError(f"adam_step: no gradient for {k}")
        mk, vk = m[k], v[k]
        mk *= beta1
        mk += (1 - beta1) * g
        vk *= beta2
        vk += (1 - beta2) * (g * g)
        p.data -= (lr * (mk / bc1) / (np.sqrt(vk / bc2) + eps)).astype(p.data.dtype, copy=False)
