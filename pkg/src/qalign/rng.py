"""Deterministic PRNG primitives shared by splitting, batching, and pairing.

The generator is xoshiro256** seeded through splitmix64, so every shuffle and
draw is reproducible bit-for-bit across platforms and Python versions (the
stdlib ``random`` module gives no such guarantee for shuffles of arbitrary
sequences, and we want split files and training logs to be byte-identical).

Conventions, fixed once and documented here:

* 64-bit seeds; Python ints are masked to 64 bits.
* ``shuffle`` is an in-place Fisher-Yates walking from the last index down,
  with ``j = next_u64() % (i + 1)``.  The modulo bias is far below anything
  observable at the record counts this package handles; determinism is the
  point.
* Language strata are seeded with ``seed XOR fnv1a64(language)`` where
  fnv1a64 is the 64-bit FNV-1a hash of the UTF-8 bytes of the language code.
* Derived streams (per-epoch batch order, per-step pair sampling) come from
  ``mix64(seed, tag, index)`` so that consuming one stream never perturbs
  another.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_GOLDEN = 0x9E3779B97F4A7C15


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & MASK64
    return h


def splitmix64(state: int):
    """Infinite splitmix64 stream; used only to expand seeds into state."""
    state &= MASK64
    while True:
        state = (state + _GOLDEN) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield (z ^ (z >> 31)) & MASK64


def mix64(seed: int, tag: str, index: int = 0) -> int:
    """Derive an independent 64-bit seed from (seed, tag, index)."""
    return (seed ^ fnv1a64(tag) ^ ((index * _GOLDEN) & MASK64)) & MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 seeding."""

    def __init__(self, seed: int):
        gen = splitmix64(seed)
        self._s = [next(gen) for _ in range(4)]
        if not any(self._s):  # all-zero state is the one forbidden state
            self._s[0] = 1

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, bound: int) -> int:
        """Uniform-ish draw in [0, bound) via modulo reduction."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        return self.next_u64() % bound

    def shuffle(self, seq: list) -> None:
        """In-place Fisher-Yates shuffle, descending index order."""
        for i in range(len(seq) - 1, 0, -1):
            j = self.below(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def choice(self, seq):
        if not seq:
            raise ValueError("cannot choose from an empty sequence")
        return seq[self.below(len(seq))]


def stream(seed: int, tag: str, index: int = 0) -> Xoshiro256StarStar:
    """Independent generator for (seed, tag, index); see module docstring."""
    return Xoshiro256StarStar(mix64(seed, tag, index))
