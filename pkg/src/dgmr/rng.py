"""Deterministic random streams.

All stochastic code in this package draws from an `Rng`, a thin wrapper
over numpy's Philox bit generator. Philox is counter-based: the stream is
a pure function of (seed, stream) with no hidden global state, so the same
seed reproduces the same samples across runs and platforms. Substreams are
derived by changing the high 64 bits of the 128-bit key, which Philox
guarantees to be statistically independent.

Draws are generated in float64 and cast by callers; this keeps the stream
identical regardless of the consuming model's dtype.
"""

from __future__ import annotations

import numpy as np

ALGORITHM = "philox4x64-10 (numpy Philox, key-seeded)"

_MASK64 = (1 << 64) - 1


class Rng:
    """Seeded Philox stream with derivable substreams."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = self.seed | (self.stream << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, tag: int) -> "Rng":
        """Independent substream; same (seed, tag) always yields the same stream."""
        return Rng(self.seed, stream=self.stream * 0x9E3779B97F4A7C15 + tag + 1)

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(size=shape)

    def uniform(self, shape=()) -> np.ndarray:
        return self._gen.random(size=shape)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.stream})"


def seed_rng(seed: int) -> Rng:
    return Rng(seed)
