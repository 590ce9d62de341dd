"""Hot inner loops: patch extraction for convolution and bilinear warping.

Every kernel exists twice. The numpy versions are always importable; the numba
versions are compiled lazily on first call. The module-level names
(``im2col``, ``col2im``, ``warp_affine``) point at whichever backend
:mod:`plae._accel` selected, so callers never branch.

Both paths are deterministic. They are not bit-identical to each other
(``col2im`` accumulates in a different order), only to themselves.
"""

from types import SimpleNamespace

import numpy as np

from plae._accel import USE_NUMBA, HAVE_NUMBA, njit


# ---------------------------------------------------------------------------
# numpy path
# ---------------------------------------------------------------------------


def _im2col_np(xp, kh, kw, stride, oh, ow):
    """Patches of a padded batch ``xp[N,C,Hp,Wp]`` as ``[N, oh*ow, C*kh*kw]``."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    # [N,C,oh,ow,kh,kw] -> [N,oh,ow,C,kh,kw]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, oh * ow, c * kh * kw)


def _col2im_np(cols, c, hp, wp, kh, kw, stride, oh, ow):
    n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    d = cols.reshape(n, oh, ow, c, kh, kw)
    for u in range(kh):
        for v in range(kw):
            out[:, :, u : u + stride * (oh - 1) + 1 : stride, v : v + stride * (ow - 1) + 1 : stride] += d[
                :, :, :, :, u, v
            ].transpose(0, 3, 1, 2)
    return out


def _warp_affine_np(img, m, oh, ow):
    c, h, w = img.shape
    ys, xs = np.mgrid[0:oh, 0:ow].astype(np.float64)
    sx = m[0, 0] * xs + m[0, 1] * ys + m[0, 2]
    sy = m[1, 0] * xs + m[1, 1] * ys + m[1, 2]
    x0f = np.floor(sx)
    y0f = np.floor(sy)
    fx = sx - x0f
    fy = sy - y0f
    x0 = x0f.astype(np.int64)
    y0 = y0f.astype(np.int64)

    def tap(yy, xx):
        ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        vals = img[:, np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)].astype(np.float64)
        return np.where(ok, vals, 0.0)

    p00 = tap(y0, x0)
    p01 = tap(y0, x0 + 1)
    p10 = tap(y0 + 1, x0)
    p11 = tap(y0 + 1, x0 + 1)
    top = p00 + fx * (p01 - p00)
    bot = p10 + fx * (p11 - p10)
    return (top + fy * (bot - top)).astype(img.dtype)


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------


@njit(cache=True)
def _im2col_nb(xp, kh, kw, stride, oh, ow):
    n, c, hp, wp = xp.shape
    cols = np.empty((n, oh * ow, c * kh * kw), dtype=xp.dtype)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                r = i * ow + j
                q = 0
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            cols[b, r, q] = xp[b, ch, i * stride + u, j * stride + v]
                            q += 1
    return cols


@njit(cache=True)
def _col2im_nb(cols, c, hp, wp, kh, kw, stride, oh, ow):
    n = cols.shape[0]
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                r = i * ow + j
                q = 0
                for ch in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            out[b, ch, i * stride + u, j * stride + v] += cols[b, r, q]
                            q += 1
    return out


@njit(cache=True)
def _warp_affine_nb(img, m, oh, ow):
    c, h, w = img.shape
    out = np.empty((c, oh, ow), dtype=img.dtype)
    for y in range(oh):
        for x in range(ow):
            sx = m[0, 0] * x + m[0, 1] * y + m[0, 2]
            sy = m[1, 0] * x + m[1, 1] * y + m[1, 2]
            x0f = np.floor(sx)
            y0f = np.floor(sy)
            fx = sx - x0f
            fy = sy - y0f
            x0 = int(x0f)
            y0 = int(y0f)
            in_x0 = 0 <= x0 < w
            in_x1 = 0 <= x0 + 1 < w
            in_y0 = 0 <= y0 < h
            in_y1 = 0 <= y0 + 1 < h
            for ch in range(c):
                p00 = float(img[ch, y0, x0]) if (in_y0 and in_x0) else 0.0
                p01 = float(img[ch, y0, x0 + 1]) if (in_y0 and in_x1) else 0.0
                p10 = float(img[ch, y0 + 1, x0]) if (in_y1 and in_x0) else 0.0
                p11 = float(img[ch, y0 + 1, x0 + 1]) if (in_y1 and in_x1) else 0.0
                top = p00 + fx * (p01 - p00)
                bot = p10 + fx * (p11 - p10)
                out[ch, y, x] = top + fy * (bot - top)
    return out


numpy_kernels = SimpleNamespace(im2col=_im2col_np, col2im=_col2im_np, warp_affine=_warp_affine_np)
numba_kernels = (
    SimpleNamespace(im2col=_im2col_nb, col2im=_col2im_nb, warp_affine=_warp_affine_nb) if HAVE_NUMBA else None
)

_active = numba_kernels if USE_NUMBA else numpy_kernels

im2col = _active.im2col
col2im = _active.col2im
warp_affine = _active.warp_affine
