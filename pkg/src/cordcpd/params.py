"""Named parameter registry shared by the encoder/decoder stacks.

Parameters live as autodiff tensors in insertion order; the optimizer sees
them only through flatten()/load_vector(), which keeps Adam a plain array
update and makes checkpoints a single float64 vector.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import Tensor
from .rng import Rng


class ParamSet:
    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, shape: tuple[int, ...], rng: Rng | None = None,
            fan_in: int | None = None, zero: bool = False) -> Tensor:
        """Register a parameter tensor.

        Weights draw from U(-1/sqrt(fan_in), 1/sqrt(fan_in)) on the given
        rng (fan_in defaults to the last axis); ``zero`` initializes biases.
        """
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        if zero:
            data = np.zeros(shape)
        else:
            if rng is None:
                raise ValueError(f"parameter {name!r} needs an rng to initialize")
            fan = fan_in if fan_in is not None else (shape[-1] if shape else 1)
            bound = 1.0 / math.sqrt(max(1, fan))
            data = rng.substream("param", name).uniform(-bound, bound, size=shape)
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    @property
    def total_size(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def flatten(self) -> np.ndarray:
        """All parameter values as one float64 vector, in insertion order."""
        if not self._params:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self._params.values()])

    def load_vector(self, vec: np.ndarray) -> None:
        """Write a flat vector back into the registered tensors in place."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.ndim != 1 or vec.size != self.total_size:
            raise ValueError(
                f"parameter vector has {vec.size} entries, registry holds {self.total_size}")
        offset = 0
        for t in self._params.values():
            n = t.data.size
            t.data = vec[offset:offset + n].reshape(t.data.shape).copy()
            offset += n
