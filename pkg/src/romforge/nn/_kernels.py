"""Compiled inner loops for the layer implementations.

Everything here is a straight loop transcription of the corresponding
numpy expression; numba only removes temporaries and fuses passes (the
"same" zero padding is applied implicitly while gathering/scattering).
All kernels are single-threaded and float64, so results are bitwise
reproducible.
"""

import numpy as np
from numba import njit

_OPTS = dict(cache=True, fastmath=False, parallel=False)


@njit(**_OPTS)
def gather_patches(x, oh, ow, kh, kw, sh, sw, pt, pl):
    """Sliding windows of zero-padded x into (b,oh,ow,kh,kw,c)."""
    b, h, w, c = x.shape
    cols = np.zeros((b, oh, ow, kh, kw, c), dtype=x.dtype)
    for bi in range(b):
        for i in range(oh):
            for ki in range(kh):
                row = i * sh + ki - pt
                if row < 0 or row >= h:
                    continue
                for j in range(ow):
                    for kj in range(kw):
                        col = j * sw + kj - pl
                        if col < 0 or col >= w:
                            continue
                        for ch in range(c):
                            cols[bi, i, j, ki, kj, ch] = x[bi, row, col, ch]
    return cols


@njit(**_OPTS)
def scatter_patches(cols, h, w, sh, sw, pt, pl):
    """Adjoint of `gather_patches`: accumulate windows, cropping the pad."""
    b, oh, ow, kh, kw, c = cols.shape
    x = np.zeros((b, h, w, c), dtype=cols.dtype)
    for bi in range(b):
        for i in range(oh):
            for ki in range(kh):
                row = i * sh + ki - pt
                if row < 0 or row >= h:
                    continue
                for j in range(ow):
                    for kj in range(kw):
                        col = j * sw + kj - pl
                        if col < 0 or col >= w:
                            continue
                        for ch in range(c):
                            x[bi, row, col, ch] += cols[bi, i, j, ki, kj, ch]
    return x


@njit(**_OPTS)
def leaky_relu_forward(x, alpha):
    flat = x.ravel()
    out = np.empty_like(flat)
    neg = np.empty(flat.size, dtype=np.uint8)
    drop = 1.0 - alpha
    for i in range(flat.size):
        m = np.uint8(flat[i] < 0.0)
        neg[i] = m
        out[i] = flat[i] * (1.0 - drop * m)
    return out.reshape(x.shape), neg


@njit(**_OPTS)
def sigmoid_forward(x):
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        v = flat[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + np.exp(-v))
        else:
            e = np.exp(v)
            out[i] = e / (1.0 + e)
    return out.reshape(x.shape)


@njit(**_OPTS)
def leaky_relu_backward(dout, neg, alpha):
    flat_d = dout.ravel()
    out = np.empty_like(flat_d)
    drop = 1.0 - alpha
    for i in range(flat_d.size):
        out[i] = flat_d[i] * (1.0 - drop * neg[i])
    return out.reshape(dout.shape)


@njit(**_OPTS)
def sigmoid_backward(dout, y):
    flat_d = dout.ravel()
    flat_y = y.ravel()
    out = np.empty_like(flat_d)
    for i in range(flat_d.size):
        out[i] = flat_d[i] * flat_y[i] * (1.0 - flat_y[i])
    return out.reshape(dout.shape)


@njit(**_OPTS)
def maxpool_forward(x, oh, ow, ph, pw, sh, sw, pt, pl):
    """Window maxima over the padded grid; padding never wins the max."""
    b, h, w, c = x.shape
    out = np.empty((b, oh, ow, c), dtype=x.dtype)
    arg = np.empty((b, oh, ow, c), dtype=np.int64)
    for bi in range(b):
        for i in range(oh):
            for j in range(ow):
                out[bi, i, j, :] = -np.inf
                arg[bi, i, j, :] = 0
                for ki in range(ph):  # window scanned row-major so the
                    row = i * sh + ki - pt  # first maximal element wins ties
                    if row < 0 or row >= h:
                        continue
                    for kj in range(pw):
                        col = j * sw + kj - pl
                        if col < 0 or col >= w:
                            continue
                        k = ki * pw + kj
                        for ch in range(c):
                            v = x[bi, row, col, ch]
                            if v > out[bi, i, j, ch]:
                                out[bi, i, j, ch] = v
                                arg[bi, i, j, ch] = k
    return out, arg


@njit(**_OPTS)
def maxpool_backward(dout, arg, h, w, ph, pw, sh, sw, pt, pl):
    b, oh, ow, c = dout.shape
    dx = np.zeros((b, h, w, c), dtype=dout.dtype)
    for bi in range(b):
        for i in range(oh):
            for j in range(ow):
                for ch in range(c):
                    k = arg[bi, i, j, ch]
                    row = i * sh + k // pw - pt
                    col = j * sw + k % pw - pl
                    dx[bi, row, col, ch] += dout[bi, i, j, ch]
    return dx


@njit(**_OPTS)
def adam_update(p, g, m, v, t, lr, b1, b2, eps):
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for i in range(p.size):
        gi = g[i]
        m[i] = b1 * m[i] + (1.0 - b1) * gi
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@njit(**_OPTS)
def all_finite(x):
    flat = x.ravel()
    for i in range(flat.size):
        if not np.isfinite(flat[i]):
            return False
    return True
