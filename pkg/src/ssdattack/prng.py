"""Portable counter-based 64-bit generator (SplitMix64).

Output ``i`` (``i >= 1``) of a stream seeded with ``s`` is

    z = s + i * 0x9E3779B97F4A7C15            (mod 2**64)
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (mod 2**64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB  (mod 2**64)
    out = z ^ (z >> 31)

which is exactly the sequence produced by the sequential SplitMix64
reference.  Because each output depends only on ``(s, i)`` the stream can be
evaluated in vectorized blocks.  Derived quantities:

* uniform double in [0, 1): ``(out >> 11) * 2**-53``
* standard normal: Box-Muller on two consecutive uniforms ``u1, u2``:
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``
* integer in [0, n): ``floor(uniform * n)``
"""

from __future__ import annotations

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Sequential view over the counter-based stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self) -> int:
        self.counter += 1
        return mix64(self.seed + self.counter * GAMMA)

    def u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * np.uint64(GAMMA)
            return _mix_array(z)

    def uniform(self, n: int | None = None):
        if n is None:
            return (self.next_u64() >> 11) * 2.0**-53
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def uniform_range(self, lo: float, hi: float, n: int | None = None):
        return lo + (hi - lo) * self.uniform(n)

    def normal(self, n: int) -> np.ndarray:
        u = self.uniform(2 * n)
        u1, u2 = u[0::2], u[1::2]
        return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)

    def integers(self, high: int, n: int | None = None):
        if n is None:
            return int(self.uniform() * high)
        return np.floor(self.uniform(n) * high).astype(np.int64)
