"""Deterministic 64-bit RNG (SplitMix64) used for every random choice.

All sampling in the package flows through this generator so that datasets,
weight initialisations, and task instances are bit-reproducible across
platforms.  SplitMix64 is counter-based, which also makes bulk generation
vectorisable with plain uint64 arithmetic.

Conventions (part of the on-disk dataset contract):
  * ``randint(n)`` is ``next_u64() % n`` (modulo bias is negligible for
    the small ``n`` used here and keeps the stream easy to re-implement).
  * ``uniform()`` uses the top 53 bits: ``(z >> 11) * 2**-53``.
  * ``derive(*tags)`` seeds a child stream by hashing the tags into the
    parent seed, e.g. one stream per (seed, epoch).
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_MASK = 0xFFFFFFFFFFFFFFFF


def _mix(z: int) -> int:
    z = (z ^ (z >> 30)) * _MIX1 & _MASK
    z = (z ^ (z >> 27)) * _MIX2 & _MASK
    return z ^ (z >> 31)


class SplitMix64:
    """Seedable stream of 64-bit words with vectorised bulk draws."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return _mix(self._state)

    def next_array(self, n: int) -> np.ndarray:
        """n consecutive outputs as uint64, identical to n next_u64 calls."""
        with np.errstate(over="ignore"):
            states = np.uint64(self._state) + (
                np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
            )
            z = states
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self._state = (self._state + n * _GOLDEN) & _MASK
        return z

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        out = (self.next_array(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return out.reshape(shape)

    def randint(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randint bound must be positive")
        return self.next_u64() % n

    def bits(self, shape) -> np.ndarray:
        """i.i.d. fair bits as float64 zeros and ones."""
        n = int(np.prod(shape))
        out = (self.next_array(n) & np.uint64(1)).astype(np.float64)
        return out.reshape(shape)

    def shuffle(self, xs: list) -> None:
        """In-place Fisher-Yates."""
        for i in range(len(xs) - 1, 0, -1):
            j = self.randint(i + 1)
            xs[i], xs[j] = xs[j], xs[i]

    def derive(self, *tags: int) -> "SplitMix64":
        child = self._state
        for t in tags:
            child = _mix((child + _GOLDEN + (t & _MASK)) & _MASK)
        return SplitMix64(child)
