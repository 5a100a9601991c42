"""Gumbel-Softmax sampling of relaxed categorical edge types."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, _accum, _make, softmax
from .rng import Rng


def gumbel_softmax(logits: Tensor, temperature: float, rng: Rng,
                   hard: bool = False, noise: np.ndarray | None = None) -> Tensor:
    """Sample a relaxed one-hot vector over the last axis of ``logits``.

    ``noise`` lets a caller freeze the Gumbel draws (gradient checks need
    the same noise on every evaluation); otherwise one draw per logit is
    taken from ``rng``. With ``hard=True`` the result is exactly one-hot and
    gradients pass straight through the soft sample.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    if noise is None:
        noise = rng.gumbel(size=logits.shape)
    soft = softmax((logits + Tensor(noise)) * (1.0 / temperature), axis=-1)
    if not hard:
        return soft

    k = soft.shape[-1]
    hard_data = np.zeros_like(soft.data)
    idx = soft.data.argmax(axis=-1)
    np.put_along_axis(hard_data, idx[..., None], 1.0, axis=-1)
    assert hard_data.shape[-1] == k

    def backward(g):
        if soft.requires_grad:
            _accum(soft, g)

    return _make(hard_data, "hard_onehot", (soft,), backward)
