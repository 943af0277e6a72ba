"""Seeded xorshift64* generator.

The update rule is fixed so random-point suites are reproducible by any
implementation::

    s ^= s >> 12;  s ^= s << 25 (mod 2**64);  s ^= s >> 27
    out = s * 0x2545F4914F6CDD1D (mod 2**64)
    uniform = (out >> 11) * 2**-53            # in [0, 1)

The 64-bit state is initialised from the seed with one splitmix64 step
(``z = seed + 0x9E3779B97F4A7C15``, then the standard splitmix64 finaliser);
a zero state is replaced by ``0x9E3779B97F4A7C15``.
"""

from __future__ import annotations

import math

import numpy as np

_MASK = (1 << 64) - 1


def _splitmix64(seed: int) -> int:
    z = (seed + 0x9E3779B97F4A7C15) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


class Xorshift:
    def __init__(self, seed: int = 0):
        self.state = _splitmix64(int(seed) & _MASK) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        s = self.state
        s ^= s >> 12
        s ^= (s << 25) & _MASK
        s ^= s >> 27
        self.state = s
        return (s * 0x2545F4914F6CDD1D) & _MASK

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        if size is None:
            return low + (high - low) * self.random()
        n = int(np.prod(size))
        vals = np.array([self.random() for _ in range(n)], dtype=float).reshape(size)
        return low + (high - low) * vals

    def normal(self, size=None):
        """Standard normal draws by Box-Muller (one uniform pair per draw)."""
        def one():
            u1 = 1.0 - self.random()
            u2 = self.random()
            return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

        if size is None:
            return one()
        n = int(np.prod(size))
        return np.array([one() for _ in range(n)], dtype=float).reshape(size)

    def integers(self, low: int, high: int) -> int:
        """Integer in ``[low, high)``."""
        return low + int(self.random() * (high - low))

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]
