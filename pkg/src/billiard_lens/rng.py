"""Deterministic random numbers: splitmix64-seeded xoshiro256**.

Pure-integer implementation so that identical seeds produce bitwise
identical streams on every platform, independent of numpy version.
"""

from __future__ import annotations

import math

_MASK = 0xFFFFFFFFFFFFFFFF


def _splitmix64(state: int):
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, (z ^ (z >> 31)) & _MASK


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    """xoshiro256** generator seeded from a single 64-bit integer."""

    def __init__(self, seed: int):
        seed = int(seed) & _MASK
        s = []
        for _ in range(4):
            seed, word = _splitmix64(seed)
            s.append(word)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def uniform_in(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def unit_angle(self) -> float:
        return 2.0 * math.pi * self.uniform()
