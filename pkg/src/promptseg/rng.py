"""Portable deterministic random number generation.

Prompt caches promise byte-identical reproduction across machines and
languages, so sampling cannot depend on any runtime's RNG internals.
This module pins the exact algorithms:

* stream generator: xoshiro256** (Blackman & Vigna), 64-bit outputs;
* state expansion: splitmix64 applied four times to the seed;
* integer draws: unbiased rejection sampling on the top of the range;
* sub-seed derivation: SHA-256 over a versioned, ``|``-joined key string,
  taking the first 8 bytes big-endian.

All arithmetic is modulo 2**64.
"""

from __future__ import annotations

import hashlib

_MASK64 = (1 << 64) - 1

SEED_DOMAIN = "promptseg.v1"


def _splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step: returns (new state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x, (z ^ (z >> 31)) & _MASK64


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256StarStar:
    """xoshiro256** with splitmix64 state expansion from a 64-bit seed."""

    def __init__(self, seed: int) -> None:
        state = seed & _MASK64
        s = []
        for _ in range(4):
            state, out = _splitmix64(state)
            s.append(out)
        if not any(s):  # all-zero state would be a fixed point
            s[0] = 1
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), bias-free via rejection sampling."""
        if n <= 0:
            raise ValueError("randbelow requires n > 0")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def sample_indices(self, population: int, k: int) -> list[int]:
        """k distinct indices from range(population), partial Fisher-Yates.

        Sparse swap table keeps this O(k) regardless of population size.
        """
        if k > population:
            raise ValueError("sample size exceeds population")
        swapped: dict[int, int] = {}
        picks = []
        for i in range(k):
            j = i + self.randbelow(population - i)
            picks.append(swapped.get(j, j))
            swapped[j] = swapped.get(i, i)
        return picks


def derive_seed(*parts: object) -> int:
    """Order-independent-of-runtime sub-seed from a tuple of key parts.

    The key string is ``promptseg.v1|part1|part2|...`` (parts via str());
    the sub-seed is the first 8 bytes of its SHA-256, big-endian.
    """
    key = "|".join([SEED_DOMAIN, *[str(p) for p in parts]])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")
