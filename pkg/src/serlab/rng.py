"""Deterministic, splittable random streams.

A stream is addressed by (seed, path); identical addresses give identical
draws on every platform, so data pipelines can parallelize without changing
results.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=4096)
def _encode_str(part: str) -> tuple[int, ...]:
    digest = hashlib.sha256(part.encode("utf-8")).digest()
    return tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))


def _encode(part) -> tuple[int, ...]:
    if isinstance(part, (int, np.integer)):
        v = int(part) & ((1 << 64) - 1)
        return (v & 0xFFFFFFFF, v >> 32)
    if isinstance(part, str):
        return _encode_str(part)
    raise TypeError(f"stream keys must be ints or strings, got {type(part).__name__}")


class RngStream:
    """Seed-derived random stream, splittable by arbitrary (purpose, index) keys."""

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)

    def split(self, *key) -> "RngStream":
        return RngStream(self.seed, self.path + key)

    def generator(self) -> np.random.Generator:
        entropy = [self.seed & 0xFFFFFFFF, (self.seed >> 32) & 0xFFFFFFFF]
        for part in self.path:
            entropy.extend(_encode(part))
        return np.random.default_rng(np.random.SeedSequence(entropy))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"
