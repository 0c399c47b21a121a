"""Portable pseudo-random number generation (splitmix64 / xoshiro256**).

Reproducibility must not depend on any host library's RNG internals, so
every stochastic choice in this package flows through the two small
generators here: xoshiro256** for sequential draws (shuffles, entity
picks) and counter-mode splitmix64 for bulk arrays (noise grids, weight
initialisation). Both are exactly reproducible from a 64-bit seed on any
platform and survive reimplementation in another language.
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / (1 << 53)


def mix64(x: int) -> int:
    """SplitMix64 finalizer: one well-mixed 64-bit word from another."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_seed(seed: int, *keys: int) -> int:
    """Fold integer keys into a seed; used to give substreams disjoint lineage."""
    out = mix64(seed)
    for k in keys:
        out = mix64(out ^ ((k * _GOLDEN) & _MASK64))
    return out


def splitmix64_array(seed: int, count: int) -> np.ndarray:
    """Counter-mode splitmix64: `count` uint64 words as a vectorised stream."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    base = np.uint64(mix64(seed))
    idx = np.arange(1, count + 1, dtype=np.uint64)
    x = base + idx * np.uint64(_GOLDEN)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def uniform_array(seed: int, count: int) -> np.ndarray:
    """`count` float64 samples in [0, 1), from counter-mode splitmix64."""
    bits = splitmix64_array(seed, count)
    return (bits >> np.uint64(11)).astype(np.float64) * _INV_2_53


def normal_array(seed: int, count: int) -> np.ndarray:
    """`count` standard-normal float64 samples via Box-Muller."""
    n_pairs = (count + 1) // 2
    u = uniform_array(seed, 2 * n_pairs)
    # 1 - u lies in (0, 1]; keeps log() away from zero.
    u1 = 1.0 - u[:n_pairs]
    u2 = u[n_pairs:]
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * math.pi * u2
    out = np.empty(2 * n_pairs, dtype=np.float64)
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:count]


class Xoshiro256StarStar:
    """Sequential PRNG for shuffles and small draws; state seeded via splitmix64."""

    __slots__ = ("_s",)

    def __init__(self, seed: int):
        s0 = mix64(seed)
        s1 = mix64(s0 + _GOLDEN)
        s2 = mix64(s1 + _GOLDEN)
        s3 = mix64(s2 + _GOLDEN)
        self._s = [s0, s1, s2, s3]

    def next_u64(self) -> int:
        s = self._s
        x = (s[1] * 5) & _MASK64
        result = (((x << 7) | (x >> 57)) & _MASK64) * 9 & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = ((s[3] << 45) | (s[3] >> 19)) & _MASK64
        return result

    def random(self) -> float:
        """Float64 in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        limit = (_MASK64 + 1) - ((_MASK64 + 1) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi], inclusive on both ends."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.below(hi - lo + 1)

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items):
        if not items:
            raise ValueError("cannot choose from an empty sequence")
        return items[self.below(len(items))]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), order random."""
        if k > n:
            raise ValueError(f"cannot sample {k} distinct values from {n}")
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]
