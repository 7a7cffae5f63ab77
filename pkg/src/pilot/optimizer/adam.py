"""Bias-corrected Adam over a list of numpy arrays."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0, **kw)


def adam_step(state: AdamState, params, grads, lr: float):
    """One Adam update.  Returns ``(new_params, new_state)``; inputs are not modified."""
    if not state.m:
        state = AdamState.zeros_like(params, beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and Adam accumulators must line up")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape or g.shape != p.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps))
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)
