"""Differentiable operators.

Convolutions use cross-correlation (no kernel flip). ``relu`` has derivative 0
at exactly 0; gradient checks skip coordinates whose finite-difference
stencil crosses a kink (see :func:`plae.autodiff.tensor.branch_trace`).
"""

from __future__ import annotations

import numpy as np

from plae import kernels
from plae.autodiff.tensor import ShapeError, Tensor, note_branch, record


def _check_conv_args(stride, padding):
    if int(stride) != stride or stride < 1:
        raise ValueError(f"stride must be a positive int, got {stride}")
    if int(padding) != padding or padding < 0:
        raise ValueError(f"padding must be a non-negative int, got {padding}")


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv_transpose_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + k


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """``[N,C,H,W] * [K,C,kh,kw] -> [N,K,H',W']``."""
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeError(f"conv2d: kernel has {kc} input channels but input has {c}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (padding {padding})")
    if bias is not None and bias.shape != (k,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({k},)")
    oh = conv_output_size(h, kh, stride, padding)
    ow = conv_output_size(w, kw, stride, padding)
    xp = _pad(x.data, padding)
    cols = kernels.im2col(xp, kh, kw, stride, oh, ow)
    wmat = kernel.data.reshape(k, -1)
    out = np.matmul(cols, wmat.T)  # [N, oh*ow, K]
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(n, k, oh, ow)

    def backward_fn(g):
        g_r = g.reshape(n, k, oh * ow).transpose(0, 2, 1)  # [N, P, K]
        gx = gk = gb = None
        if x.requires_grad:
            dcols = np.matmul(g_r, wmat)
            gxp = kernels.col2im(dcols, c, h + 2 * padding, w + 2 * padding, kh, kw, stride, oh, ow)
            gx = gxp[:, :, padding : padding + h, padding : padding + w]
        if kernel.requires_grad:
            gk = np.tensordot(g_r, cols, axes=([0, 1], [0, 1])).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d", out, inputs, backward_fn)


def conv2d_transpose(
    x: Tensor, kernel: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """``[N,K,H,W]`` with kernel ``[K,C,kh,kw]`` -> ``[N,C,H',W']``; the adjoint of :func:`conv2d`."""
    _check_conv_args(stride, padding)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, k, h, w = x.shape
    kk, c, kh, kw = kernel.shape
    if kk != k:
        raise ShapeError(f"conv2d_transpose: kernel has {kk} input channels but input has {k}")
    oh = conv_transpose_output_size(h, kh, stride, padding)
    ow = conv_transpose_output_size(w, kw, stride, padding)
    if oh <= 0 or ow <= 0:
        raise ShapeError(f"conv2d_transpose: resulting size {oh}x{ow} is not positive")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"conv2d_transpose: bias shape {bias.shape} != ({c},)")
    hp, wp = oh + 2 * padding, ow + 2 * padding
    wmat = kernel.data.reshape(k, -1)
    x_r = x.data.reshape(n, k, h * w).transpose(0, 2, 1)  # [N, P, K]
    full = kernels.col2im(np.matmul(x_r, wmat), c, hp, wp, kh, kw, stride, h, w)
    out = np.ascontiguousarray(full[:, :, padding : padding + oh, padding : padding + ow])
    if bias is not None:
        out += bias.data.reshape(1, c, 1, 1)

    def backward_fn(g):
        gx = gk = gb = None
        cols = kernels.im2col(_pad(g, padding), kh, kw, stride, h, w)  # [N, P, C*kh*kw]
        if x.requires_grad:
            gx = np.ascontiguousarray(np.matmul(cols, wmat.T).transpose(0, 2, 1)).reshape(x.shape)
        if kernel.requires_grad:
            gk = np.tensordot(x_r, cols, axes=([0, 1], [0, 1])).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return gx, gk, gb

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record("conv2d_transpose", out, inputs, backward_fn)


def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``[N,F] @ [F,G] + [G]``."""
    if x.data.ndim != 2 or weight.data.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"dense: cannot multiply {x.shape} by {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"dense: bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out += bias.data

    def backward_fn(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("dense", out, inputs, backward_fn)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    note_branch(mask)
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return record("relu", out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    v = x.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    out = np.where(v >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return record("sigmoid", out, (x,), lambda g: (g * out * (1 - out),))


def activation(kind: str, x: Tensor) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def reshape(x: Tensor, shape) -> Tensor:
    src = x.shape
    out = x.data.reshape(shape)
    return record("reshape", out, (x,), lambda g: (g.reshape(src),))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def pad2d(x: Tensor, before: int, after: int | None = None) -> Tensor:
    """Zero-pad the two spatial axes of ``[N,C,H,W]``."""
    after = before if after is None else after
    if before < 0 or after < 0:
        raise ValueError("padding must be non-negative")
    h, w = x.shape[2:]
    out = np.pad(x.data, ((0, 0), (0, 0), (before, after), (before, after)))
    return record("pad2d", out, (x,), lambda g: (g[:, :, before : before + h, before : before + w],))


def maxpool2d(x: Tensor, size: int, stride: int) -> Tensor:
    n, c, h, w = x.shape
    if h < size or w < size:
        raise ShapeError(f"maxpool2d: window {size} larger than input {h}x{w}")
    oh = (h - size) // stride + 1
    ow = (w - size) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (size, size), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    flat = win.reshape(n, c, oh, ow, size * size)
    arg = flat.argmax(axis=-1)  # first max wins on ties
    note_branch(arg)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        for u in range(size):
            for v in range(size):
                hit = arg == u * size + v
                gx[:, :, u : u + stride * (oh - 1) + 1 : stride, v : v + stride * (ow - 1) + 1 : stride] += g * hit
        return (gx,)

    return record("maxpool2d", np.ascontiguousarray(out), (x,), backward_fn)


def mse(prediction: Tensor, target: Tensor) -> Tensor:
    """Mean of squared differences. The target never receives a gradient."""
    if prediction.shape != target.shape:
        raise ShapeError(f"mse: shape mismatch {prediction.shape} vs {target.shape}")
    diff = prediction.data - target.data
    count = diff.size
    out = np.asarray(np.mean(diff * diff), dtype=prediction.dtype)
    return record("mse", out, (prediction,), lambda g: (g * (2 / count) * diff,))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``[N,C]`` logits against integer labels."""
    labels = np.asarray(labels)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward_fn(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1
        return (g * p / n,)

    return record("cross_entropy", out, (logits,), backward_fn)
