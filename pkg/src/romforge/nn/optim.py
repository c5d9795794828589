"""He-normal initialization and the Adam update rule."""

import math

import numpy as np

from . import _kernels

__all__ = ["he_normal_init", "AdamState", "adam_step"]


def he_normal_init(shape, fan_in, seed):
    """Draw weights from N(0, 2/fan_in); deterministic per seed."""
    if fan_in < 1:
        raise ValueError(f"fan_in must be positive, got {fan_in}")
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


class AdamState:
    """First/second moment accumulators for a fixed parameter list."""

    def __init__(self, params, learning_rate=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_step(params, grads, state):
    """One bias-corrected Adam update; parameters are modified in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and state must have matching lengths")
    state.t += 1
    for p, g, m, v in zip(params, grads, state.m, state.v):
        _kernels.adam_update(
            p.reshape(-1),
            np.ascontiguousarray(g).reshape(-1),
            m.reshape(-1),
            v.reshape(-1),
            state.t,
            state.learning_rate,
            state.beta1,
            state.beta2,
            state.eps,
        )
    return params, state
