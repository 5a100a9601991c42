"""Deterministic random streams built on the counter-based Philox generator.

Every consumer of randomness (dataset generation, weight init, Gumbel noise,
batch shuffling) works from a substream derived as a stable hash of the
master seed plus a sequence of purpose tags, so independent substreams can
be drawn in any order, or in parallel, without changing each other's values.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _hash_tags(seed: int, tags: tuple) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    for tag in tags:
        if isinstance(tag, str):
            h.update(b"s" + tag.encode("utf-8") + b"\x00")
        elif isinstance(tag, (int, np.integer)):
            h.update(b"i" + int(tag).to_bytes(8, "little", signed=True))
        else:
            raise TypeError(f"substream tags must be str or int, got {type(tag)}")
    return int.from_bytes(h.digest(), "little")


class Rng:
    """A Philox-backed stream identified by (master seed, substream id)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = (self.seed << 64) | self.stream
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def substream(self, *tags) -> "Rng":
        """Derive an independent stream from purpose tags (strs/ints)."""
        return Rng(self.seed, _hash_tags(self.stream, tags))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None) -> np.ndarray:
        return self._gen.normal(loc, scale, size=size)

    def gumbel(self, size=None) -> np.ndarray:
        # Inverse-transform from the uniform stream; numpy's gumbel has the
        # same form but this keeps the draw sequence explicit.
        u = self._gen.uniform(low=np.finfo(np.float64).tiny, high=1.0, size=size)
        return -np.log(-np.log(u))

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high] inclusive."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
