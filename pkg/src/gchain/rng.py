"""Deterministic uniform supply for the samplers.

Counter-based Philox streams keyed by (seed, stream_id): replicates get
disjoint, reproducible streams with no shared state, and the same key
always replays the same sequence regardless of how draws are chunked.
"""

from __future__ import annotations

import numpy as np


def philox_generator(seed: int, stream_id: int = 0) -> np.random.Generator:
    key = np.array([seed, stream_id], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class UniformStream:
    """Buffered float64 uniforms in [0, 1) from one Philox stream."""

    __slots__ = ("seed", "stream_id", "_gen", "_buf", "_pos", "_block")

    def __init__(self, seed: int, stream_id: int = 0, block: int = 1 << 16):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._gen = philox_generator(self.seed, self.stream_id)
        self._block = int(block)
        self._buf = self._gen.random(self._block)
        self._pos = 0

    def _refill(self) -> None:
        self._buf = self._gen.random(self._block)
        self._pos = 0

    def next(self) -> float:
        if self._pos >= len(self._buf):
            self._refill()
        u = self._buf[self._pos]
        self._pos += 1
        return u

    def next_pair(self) -> tuple[float, float]:
        pos = self._pos
        buf = self._buf
        if pos + 2 > len(buf):
            # keep pairs contiguous in the underlying stream
            if pos < len(buf):
                u1 = buf[pos]
                self._refill()
                u2 = self._buf[0]
                self._pos = 1
                return u1, u2
            self._refill()
            pos = 0
            buf = self._buf
        self._pos = pos + 2
        return buf[pos], buf[pos + 1]


def fair_signs(gen: np.random.Generator, n: int) -> np.ndarray:
    """n i.i.d. fair ±1 symbols as int8."""
    return (2 * gen.integers(0, 2, size=n, dtype=np.int8) - 1).astype(np.int8)
