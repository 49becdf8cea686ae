"""Deterministic seeding utilities shared by the whole pipeline.

All randomness flows from a single user seed. Sub-streams are derived by
hashing (seed, purpose-string) with a fixed scheme, so every component gets
an independent, reproducible stream on any platform.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix(z: int) -> int:
    # splitmix64 finalizer
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


class SplitMix64:
    """Minimal 64-bit PRNG with a fixed, platform-independent sequence."""

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return _mix(self._state)

    def randrange(self, n: int) -> int:
        """Unbiased draw from [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        threshold = (1 << 64) - ((1 << 64) % n)
        while True:
            r = self.next_u64()
            if r < threshold:
                return r % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randrange(i + 1)
            items[i], items[j] = items[j], items[i]


def derive_seed(seed: int, purpose: str) -> int:
    """Derive an independent 64-bit sub-seed from (seed, purpose).

    FNV-1a over the purpose string folded into the seed, then a splitmix64
    finalize so related (seed, purpose) pairs decorrelate.
    """
    h = (seed ^ _FNV_OFFSET) & _MASK64
    for b in purpose.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return _mix((h + _GOLDEN) & _MASK64)
