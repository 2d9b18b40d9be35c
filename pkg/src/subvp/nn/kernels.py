"""3x3 same-padding convolution and 2x2 max-pooling kernels.

Every kernel has a loop implementation (compiled by numba when available) and
a vectorized numpy implementation. The public names bind to the numba loops
unless numba is missing or disabled via ``SUBVP_DISABLE_NUMBA``.

Layouts: ``x`` is ``(N, C, H, W)``, weights ``(F, C, 3, 3)``, bias ``(F,)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .._accel import HAVE_NUMBA, njit


@njit(fastmath=True)
def conv3x3_forward_loops(x, w, b):
    N, C, H, W = x.shape
    F = w.shape[0]
    out = np.empty((N, F, H, W), dtype=x.dtype)
    for n in range(N):
        for f in range(F):
            out[n, f, :, :] = b[f]
            for c in range(C):
                for i in range(3):
                    for j in range(3):
                        k = w[f, c, i, j]
                        y0 = max(0, 1 - i)
                        y1 = min(H, H + 1 - i)
                        x0 = max(0, 1 - j)
                        x1 = min(W, W + 1 - j)
                        for yy in range(y0, y1):
                            for xx in range(x0, x1):
                                out[n, f, yy, xx] += k * x[n, c, yy + i - 1, xx + j - 1]
    return out


@njit(fastmath=True)
def conv3x3_backward_loops(dout, x, w):
    N, C, H, W = x.shape
    F = w.shape[0]
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    db = np.zeros(F, dtype=w.dtype)
    for n in range(N):
        for f in range(F):
            for yy in range(H):
                for xx in range(W):
                    db[f] += dout[n, f, yy, xx]
            for c in range(C):
                for i in range(3):
                    for j in range(3):
                        y0 = max(0, 1 - i)
                        y1 = min(H, H + 1 - i)
                        x0 = max(0, 1 - j)
                        x1 = min(W, W + 1 - j)
                        acc = 0.0
                        for yy in range(y0, y1):
                            for xx in range(x0, x1):
                                acc += dout[n, f, yy, xx] * x[n, c, yy + i - 1, xx + j - 1]
                        dw[f, c, i, j] += acc
        # separate pass so the scatter into dx vectorizes
        for c in range(C):
            for f in range(F):
                for i in range(3):
                    for j in range(3):
                        k = w[f, c, i, j]
                        y0 = max(0, 1 - i)
                        y1 = min(H, H + 1 - i)
                        x0 = max(0, 1 - j)
                        x1 = min(W, W + 1 - j)
                        for yy in range(y0, y1):
                            for xx in range(x0, x1):
                                dx[n, c, yy + i - 1, xx + j - 1] += k * dout[n, f, yy, xx]
    return dx, dw, db


def _columns(x):
    # (N, C, H, W) -> (N*H*W, C*9) patches of the zero-padded input
    N, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))  # N, C, H, W, 3, 3
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(N * H * W, C * 9)


def conv3x3_forward_numpy(x, w, b):
    N, C, H, W = x.shape
    F = w.shape[0]
    out = _columns(x) @ w.reshape(F, C * 9).T + b
    return np.ascontiguousarray(out.reshape(N, H, W, F).transpose(0, 3, 1, 2))


def conv3x3_backward_numpy(dout, x, w):
    N, C, H, W = x.shape
    F = w.shape[0]
    dmat = dout.transpose(0, 2, 3, 1).reshape(N * H * W, F)
    dw = (dmat.T @ _columns(x)).reshape(w.shape)
    db = dmat.sum(axis=0)
    dcols = (dmat @ w.reshape(F, C * 9)).reshape(N, H, W, C, 3, 3)
    dxp = np.zeros((N, C, H + 2, W + 2), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + H, j:j + W] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(dxp[:, :, 1:-1, 1:-1]), dw, db


@njit
def maxpool2_forward_loops(x):
    N, C, H, W = x.shape
    H2, W2 = H // 2, W // 2
    out = np.empty((N, C, H2, W2), dtype=x.dtype)
    arg = np.empty((N, C, H2, W2), dtype=np.int8)
    for n in range(N):
        for c in range(C):
            for yy in range(H2):
                for xx in range(W2):
                    best = x[n, c, 2 * yy, 2 * xx]
                    k = 0
                    for q in range(1, 4):
                        v = x[n, c, 2 * yy + q // 2, 2 * xx + q % 2]
                        if v > best:
                            best = v
                            k = q
                    out[n, c, yy, xx] = best
                    arg[n, c, yy, xx] = k
    return out, arg


@njit
def maxpool2_backward_loops(dout, arg):
    N, C, H2, W2 = dout.shape
    dx = np.zeros((N, C, 2 * H2, 2 * W2), dtype=dout.dtype)
    for n in range(N):
        for c in range(C):
            for yy in range(H2):
                for xx in range(W2):
                    q = arg[n, c, yy, xx]
                    dx[n, c, 2 * yy + q // 2, 2 * xx + q % 2] = dout[n, c, yy, xx]
    return dx


def maxpool2_forward_numpy(x):
    N, C, H, W = x.shape
    blocks = x.reshape(N, C, H // 2, 2, W // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, H // 2, W // 2, 4)
    arg = blocks.argmax(axis=-1).astype(np.int8)
    out = np.take_along_axis(blocks, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def maxpool2_backward_numpy(dout, arg):
    N, C, H2, W2 = dout.shape
    blocks = np.zeros((N, C, H2, W2, 4), dtype=dout.dtype)
    np.put_along_axis(blocks, arg[..., None].astype(np.intp), dout[..., None], axis=-1)
    return blocks.reshape(N, C, H2, W2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(N, C, 2 * H2, 2 * W2)


if HAVE_NUMBA:
    conv3x3_forward = conv3x3_forward_loops
    conv3x3_backward = conv3x3_backward_loops
    maxpool2_forward = maxpool2_forward_loops
    maxpool2_backward = maxpool2_backward_loops
else:
    conv3x3_forward = conv3x3_forward_numpy
    conv3x3_backward = conv3x3_backward_numpy
    maxpool2_forward = maxpool2_forward_numpy
    maxpool2_backward = maxpool2_backward_numpy
