"""Adam optimizer over a flat float64 parameter vector."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for one parameter vector."""

    size: int
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)

    def __post_init__(self):
        self.m = np.zeros(self.size, dtype=np.float64)
        self.v = np.zeros(self.size, dtype=np.float64)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update. Returns the new parameter vector and
    advances ``state`` in place."""
    if params.shape != grads.shape or params.size != state.size:
        raise ValueError(
            f"params/grads/state length mismatch: {params.size}, {grads.size}, {state.size}")
    if not np.isfinite(grads).all():
        raise FloatingPointError("non-finite gradient entries")
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
