"""Adam with bias correction and optional decoupled weight decay."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    k: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Update ``params`` in place from ``grads`` (both name -> array); returns them.

    ``weight_decay`` shrinks every parameter with more than one axis (weight
    matrices and kernels, not biases) by ``lr * weight_decay`` per step,
    separately from the gradient moments.
    """
    state.k += 1
    bc1 = 1.0 - state.beta1 ** state.k
    bc2 = 1.0 - state.beta2 ** state.k
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        if state.weight_decay and p.ndim > 1:
            p -= (state.lr * state.weight_decay * p).astype(p.dtype)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return params, state
