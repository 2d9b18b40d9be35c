"""Layer primitives with hand-written backward passes.

Each ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache and returns gradients for the
inputs followed by the parameters. Arrays keep the dtype they come in with.
"""

import numpy as np

from ..errors import ShapeError
from . import kernels


def _check(cond, what, a, b):
    if not cond:
        raise ShapeError(f"{what}: shapes {tuple(a)} and {tuple(b)} are incompatible")


def glorot(rng, fan_in, fan_out, shape=None, dtype=np.float32):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def dense_forward(x, W, b):
    _check(x.shape[-1] == W.shape[0], "dense", x.shape, W.shape)
    return x @ W + b, (x, W)


def dense_backward(dy, cache):
    x, W = cache
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    return dy @ W.T, x2.T @ dy2, dy2.sum(axis=0)


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy, y):
    return dy * (1.0 - y * y)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def conv2d_forward(x, W, b):
    """3x3 kernels, stride 1, zero ``same`` padding. ``x`` is ``(N, C, H, W)``."""
    _check(x.ndim == 4 and W.ndim == 4 and W.shape[1:] == (x.shape[1], 3, 3), "conv2d", x.shape, W.shape)
    x = np.ascontiguousarray(x)
    return kernels.conv3x3_forward(x, W, b), (x, W)


def conv2d_backward(dy, cache):
    x, W = cache
    return kernels.conv3x3_backward(np.ascontiguousarray(dy), x, W)


def maxpool2_forward(x):
    """2x2 max-pool with stride 2; spatial dims must be even."""
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ShapeError(f"maxpool2: need (N, C, even H, even W), got {x.shape}")
    out, arg = kernels.maxpool2_forward(np.ascontiguousarray(x))
    return out, arg


def maxpool2_backward(dy, arg):
    return kernels.maxpool2_backward(np.ascontiguousarray(dy), arg)


def lstm_cell_forward(x, h, c, Wx, Wh, b):
    """One step of a standard LSTM cell, gates ordered (input, forget, cell, output)."""
    _check(x.shape[-1] == Wx.shape[0], "lstm input", x.shape, Wx.shape)
    _check(h.shape[-1] == Wh.shape[0] and Wh.shape[1] == Wx.shape[1] == 4 * Wh.shape[0],
           "lstm state", h.shape, Wh.shape)
    H = h.shape[-1]
    z = x @ Wx + h @ Wh + b
    i = sigmoid(z[:, :H])
    f = sigmoid(z[:, H:2 * H])
    g = np.tanh(z[:, 2 * H:3 * H])
    o = sigmoid(z[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, g, o, tc, Wx, Wh)


def lstm_cell_backward(dh, dc, cache):
    """Returns ``dx, dh_prev, dc_prev, dWx, dWh, db``."""
    x, h, c, i, f, g, o, tc, Wx, Wh = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dz = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=1)
    return dz @ Wx.T, dz @ Wh.T, dc * f, x.T @ dz, h.T @ dz, dz.sum(axis=0)


def lstm_forward(xs, h0, c0, Wx, Wh, b):
    """Unroll over ``xs`` of shape ``(B, T, D)``; returns ``hs (B, T, H), hT, cT, cache``."""
    B, T, _ = xs.shape
    H = Wh.shape[0]
    hs = np.empty((B, T, H), dtype=xs.dtype)
    caches = []
    h, c = h0, c0
    for t in range(T):
        h, c, cache = lstm_cell_forward(xs[:, t], h, c, Wx, Wh, b)
        hs[:, t] = h
        caches.append(cache)
    return hs, h, c, caches


def lstm_backward(dhs, dhT, dcT, caches):
    """Backprop through time; ``dhs`` may be ``None`` when only the last state is used.

    Returns ``dxs, dh0, dc0, dWx, dWh, db``.
    """
    T = len(caches)
    x0, _, _, _, _, _, _, _, Wx, Wh = caches[0]
    B = x0.shape[0]
    dxs = np.empty((B, T, Wx.shape[0]), dtype=x0.dtype)
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(Wx.shape[1], dtype=Wx.dtype)
    dh, dc = dhT, dcT
    for t in reversed(range(T)):
        if dhs is not None:
            dh = dh + dhs[:, t]
        dx, dh, dc, gx, gh, gb = lstm_cell_backward(dh, dc, caches[t])
        dxs[:, t] = dx
        dWx += gx
        dWh += gh
        db += gb
    return dxs, dh, dc, dWx, dWh, db


def embedding_forward(ids, E):
    return E[ids], (ids, E.shape)


def embedding_backward(dy, cache):
    ids, shape = cache
    dE = np.zeros(shape, dtype=dy.dtype)
    np.add.at(dE, ids.reshape(-1), dy.reshape(-1, shape[1]))
    return dE


def mse_loss(pred, target):
    """Mean squared error (accumulated in float64) and its gradient."""
    _check(pred.shape == target.shape, "mse", pred.shape, target.shape)
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype)
