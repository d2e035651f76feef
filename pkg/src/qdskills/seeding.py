"""Counter-based random streams.

Every random draw in a run comes from ``stream(seed, tag, *counters)``, so a
resumed run reproduces the exact draws of an uninterrupted one without
persisting generator state, and thread scheduling never matters.
"""
from __future__ import annotations

import zlib

import numpy as np


def tag_id(tag: str) -> int:
    return zlib.crc32(tag.encode())


def stream(seed: int, tag: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag_id(tag), *map(int, counters)]))


def episode_seeds(rng: np.random.Generator, n: int) -> list[int]:
    """Per-episode reset seeds."""
    return rng.integers(0, 2**31 - 1, size=n).tolist()
