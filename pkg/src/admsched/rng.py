"""Named, independent random streams derived from one 64-bit seed."""
from __future__ import annotations

import zlib

import numpy as np

_KNOWN = {"arrivals": 1, "scheduler": 2, "drift": 3, "oracle": 4}


def stream(seed: int, name: str) -> np.random.Generator:
    key = _KNOWN.get(name)
    if key is None:
        key = zlib.crc32(name.encode()) | (1 << 32)
    return np.random.default_rng(np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(key,)))
