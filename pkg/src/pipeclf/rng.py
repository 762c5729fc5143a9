"""Deterministic random number generation.

Every random choice in the toolchain flows through :class:`SplitMix64`, a
64-bit-state generator with a published update function, so that a model or a
sample set is reproducible from its seed alone.  Reimplementations in other
languages reproduce the exact stream only if they adopt the same generator;
model equivalence across implementations should therefore be checked via
emitted model files, not via seeds.

Algorithm (SplitMix64, version 1):

    state  = (state + 0x9E3779B97F4A7C15) mod 2^64
    z      = state
    z      = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9  mod 2^64
    z      = (z XOR (z >> 27)) * 0x94D049BB133111EB  mod 2^64
    output = z XOR (z >> 31)

Bounded draws use plain modulo reduction (`next_u64() % n`); the modulo bias
is below 2^-32 for every n used here and is accepted for simplicity.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB

GENERATOR_NAME = "splitmix64/v1"


class SplitMix64:
    """SplitMix64 stream seeded with a 64-bit integer."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MUL1) & _MASK64
        z = ((z ^ (z >> 27)) * _MUL2) & _MASK64
        return z ^ (z >> 31)

    def next_below(self, n: int) -> int:
        """Uniform-ish integer in [0, n). n must be positive."""
        if n <= 0:
            raise ValueError("n must be positive")
        return self.next_u64() % n

    def child(self) -> "SplitMix64":
        """Derive an independent sub-stream (used for per-tree seeds)."""
        return SplitMix64(self.next_u64())
