"""SplitMix64 pseudo-random generator with explicit stream splitting.

Every randomized operation in the package draws from an :class:`Rng` so that a
seed fully determines the result on every platform.  Bulk draws (noise fields,
weight initialisation) are delegated to generators seeded from this stream.
"""
from __future__ import annotations

import numpy as np
import torch

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class Rng:
    __slots__ = ("state",)

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GAMMA) & MASK64
        return mix64(self.state)

    def spawn(self, index: int) -> "Rng":
        """Child stream ``index``; does not advance this generator."""
        return Rng(mix64(self.state ^ mix64((int(index) + 1) * GAMMA)))

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        # rejection sampling over the largest multiple of n below 2**64
        limit = ((1 << 64) // n) * n
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def randint(self, lo: int, hi: int) -> int:
        """Integer in the closed range [lo, hi]."""
        return lo + self.randbelow(hi - lo + 1)

    def coin(self, p: float = 0.5) -> bool:
        return self.random() < p

    def choice(self, seq):
        return seq[self.randbelow(len(seq))]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample(self, n: int, k: int) -> list[int]:
        """``k`` distinct indices from range(n), uniformly (partial Fisher-Yates)."""
        if not 0 <= k <= n:
            raise ValueError("sample size out of range")
        pool = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def numpy(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.next_u64()))

    def torch(self) -> torch.Generator:
        g = torch.Generator()
        g.manual_seed(self.next_u64() >> 1)
        return g

    def __repr__(self) -> str:
        return f"Rng(state={self.state:#018x})"
