"""Seeding and portable random number generation.

Instance generation uses numpy's PCG64 via ``np.random.default_rng``.
The search kernels use PCG32 (Melissa O'Neill's pcg32_random_r) on an
explicit uint64 state pair so runs reproduce bit-for-bit across
platforms and across thread counts.

Stream splitting: every independent consumer derives its own 64-bit
seed with ``derive_seed(master, *tokens)``, which hashes the master
seed together with string/int tokens (FNV-1a, then splitmix64
finalization). Distinct token tuples give independent streams.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def splitmix64(x: int) -> int:
    """One splitmix64 step; a strong 64-bit mixer."""
    x = (x + _SPLITMIX_GAMMA) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return (x ^ (x >> 31)) & MASK64


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & MASK64
    return h


def derive_seed(master: int, *tokens: str | int) -> int:
    """Derive an independent 64-bit stream seed from a master seed.

    Deterministic in (master, tokens); order-sensitive.
    """
    h = splitmix64(master & MASK64)
    for tok in tokens:
        if isinstance(tok, int):
            h = splitmix64(h ^ (tok & MASK64))
        else:
            h = splitmix64(h ^ fnv1a64(tok.encode("utf-8")))
    return h


class Pcg32:
    """Reference PCG32 implementation mirroring the compiled kernels.

    The search kernels carry the same (state, inc) pair in a uint64
    array; this class exists so tests can replay kernel decisions.
    """

    MULT = 6364136223846793005

    def __init__(self, seed: int, stream: int = 0):
        self.state = 0
        self.inc = ((stream << 1) | 1) & MASK64
        self.next_u32()
        self.state = (self.state + (seed & MASK64)) & MASK64
        self.next_u32()

    def next_u32(self) -> int:
        old = self.state
        self.state = (old * self.MULT + self.inc) & MASK64
        xorshifted = (((old >> 18) ^ old) >> 27) & 0xFFFFFFFF
        rot = old >> 59
        return ((xorshifted >> rot) | (xorshifted << ((32 - rot) & 31))) & 0xFFFFFFFF

    def next_below(self, n: int) -> int:
        """Integer in [0, n) via Lemire's multiply-shift."""
        return (self.next_u32() * n) >> 32

    def next_double(self) -> float:
        """Float in [0, 1) with 32 bits of resolution."""
        return self.next_u32() / 4294967296.0
