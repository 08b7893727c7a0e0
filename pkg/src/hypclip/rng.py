"""Portable seeded PRNG: SplitMix64 seeding a xoshiro256++ stream.

Both generators are specified bit-for-bit by their reference C code, so any
run is reproducible on any platform or in any language that reimplements
them. Everything random in the package (initialisation, shuffles, synthetic
data, negative sampling) draws from this stream.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1

_JUMP = (0x180EC6D33CFD0ABA, 0xD5A61266F0C9392C, 0xA9582618E03FC9AA, 0x39ABDC4529B1661C)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


class Xoshiro256pp:
    """xoshiro256++ with a few numpy-friendly sampling helpers.

    The state is four 64-bit words; ``state`` / ``from_state`` give an exact
    round trip for checkpoints.
    """

    def __init__(self, seed: int = 0):
        sm = SplitMix64(seed)
        self.s = [sm.next_u64() for _ in range(4)]

    @classmethod
    def from_state(cls, state) -> "Xoshiro256pp":
        words = [int(w) & MASK64 for w in state]
        if len(words) != 4 or not any(words):
            raise ValueError("xoshiro256++ state must be four words, not all zero")
        rng = cls.__new__(cls)
        rng.s = words
        return rng

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self.s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s0 + s3) & MASK64, 23) + s0) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def jump(self) -> None:
        """Advance by 2**128 draws; used to carve out non-overlapping substreams."""
        acc = [0, 0, 0, 0]
        for word in _JUMP:
            for b in range(64):
                if word & (1 << b):
                    acc = [a ^ s for a, s in zip(acc, self.s)]
                self.next_u64()
        self.s = acc

    def spawn(self) -> "Xoshiro256pp":
        """Return an independent child stream and move this one past it."""
        child = Xoshiro256pp.from_state(self.s)
        self.jump()
        return child

    # -- sampling -------------------------------------------------------

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, size, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(size))
        u = np.fromiter((self.next_u64() >> 11 for _ in range(n)), dtype=np.float64, count=n)
        u *= 2.0**-53
        return (low + (high - low) * u).reshape(size)

    def normal(self, size, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        """Box-Muller normals; two uniforms per pair, the second of an odd tail is dropped."""
        n = int(np.prod(size))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[0::2]  # (0, 1]
        u2 = u[1::2]
        rad = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * m)
        z[0::2] = rad * np.cos(2.0 * math.pi * u2)
        z[1::2] = rad * np.sin(2.0 * math.pi * u2)
        return (loc + scale * z[:n]).reshape(size)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = (1 << 64) - ((1 << 64) % bound)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % bound

    def integers(self, bound: int, size) -> np.ndarray:
        n = int(np.prod(size))
        return np.fromiter((self.below(bound) for _ in range(n)), dtype=np.int64, count=n).reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        perm = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return np.asarray(perm, dtype=np.int64)
