"""Seeded random streams with labeled, independently-reproducible substreams.

Substreams are derived by hashing the parent's entropy path with the label,
so adding or removing one consumer never perturbs the draws of another.
"""

from __future__ import annotations

import hashlib

import numpy as np


class Rng:
    def __init__(self, seed: int, _path: str | None = None):
        self.seed = int(seed)
        self.path = _path if _path is not None else str(self.seed)
        digest = hashlib.sha256(self.path.encode()).digest()
        self.gen = np.random.Generator(
            np.random.PCG64(int.from_bytes(digest[:16], "little")))

    def split(self, label: str) -> "Rng":
        """A fresh stream bound to ``label``; stable across runs."""
        return Rng(self.seed, _path=f"{self.path}/{label}")

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.gen.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.gen.integers(low, high, size)

    def random(self, size=None):
        return self.gen.random(size)

    def permutation(self, n):
        return self.gen.permutation(n)

    def __repr__(self):
        return f"Rng(path={self.path!r})"
