"""Domain-separated random streams derived from one experiment seed."""

import zlib

import numpy as np


def tag(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_rng(seed: int, op: str, *keys: int) -> np.random.Generator:
    """Return an independent generator for ``(seed, op, *keys)``.

    Each operation gets its own stream so that adding a draw in one place
    never shifts the randomness seen by another.
    """
    entropy = [int(seed) & 0xFFFFFFFF, tag(op), *(int(k) & 0xFFFFFFFF for k in keys)]
    return np.random.default_rng(np.random.SeedSequence(entropy))
