"""Deterministic sub-seeding.

A run is identified by ``(seed, tag, replica)``. The mixing rule is

    SeedSequence(seed, spawn_key=(crc32(tag), replica))

so replica ``i`` draws the same stream whether replicas run serially, in a
pool, or one at a time from the CLI.
"""

import os
import zlib

import numpy as np


def tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def seed_sequence(seed: int, tag: str, replica: int = 0) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    return np.random.SeedSequence(int(seed), spawn_key=(tag_key(tag), int(replica)))


def stream(seed: int, tag: str, replica: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, tag, replica)))


def max_workers() -> int:
    """Worker cap from ``UMTREE_THREADS`` (defaults to the CPU count)."""
    raw = os.environ.get("UMTREE_THREADS", "")
    if raw.strip():
        try:
            return max(1, int(raw))
        except ValueError:
            raise ValueError(f"UMTREE_THREADS must be an integer, got {raw!r}") from None
    return os.cpu_count() or 1
