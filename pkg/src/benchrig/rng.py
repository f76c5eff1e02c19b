"""Deterministic random source: SplitMix64.

All randomized behavior in benchrig (arrival schedules, synthetic inputs)
draws from this generator so schedules are reproducible across runs and
reimplementable in other languages. The algorithm is SplitMix64
(Steele, Lea & Flood's 64-bit mix finalizer):

    state += 0x9E3779B97F4A7C15                    (mod 2^64)
    z = state
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9       (mod 2^64)
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB       (mod 2^64)
    output = z ^ (z >> 31)

Reference outputs for seed 0 (first three draws):
    0xe220a8397b1dcdaf, 0x6e789e6aa1b965f4, 0x06c45d188009454f

Doubles in [0, 1) take the top 53 bits: (u64 >> 11) * 2**-53.
Splitting derives an independent child generator seeded by the next output.
"""

from __future__ import annotations

import math

__all__ = ["SplitMix64"]

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Splittable, seed-addressable 64-bit generator."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform double in [0, 1): top 53 bits scaled by 2**-53."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_exponential(self, rate: float) -> float:
        """Exponential(rate) via inverse CDF: -ln(1 - u) / rate, u in [0, 1)."""
        return -math.log(1.0 - self.next_float()) / rate

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) by modulo (bias negligible for small bounds)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def split(self) -> "SplitMix64":
        """Derive an independent child generator."""
        return SplitMix64(self.next_u64())
