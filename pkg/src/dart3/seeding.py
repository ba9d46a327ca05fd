"""Deterministic per-consumer random streams derived from one 64-bit seed."""
import zlib

import numpy as np


def rng_for(seed: int, consumer: str, *index: int) -> np.random.Generator:
    """Independent generator for ``consumer`` (and optional integer sub-index)."""
    key = (zlib.crc32(consumer.encode("utf-8")),) + tuple(int(i) for i in index)
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))
