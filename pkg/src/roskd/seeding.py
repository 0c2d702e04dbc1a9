"""Root-seed splitting.

Every random stream is derived from ``(root_seed, *keys)`` through
``numpy.random.SeedSequence`` with the keys as spawn key. String keys are
mapped to integers with CRC32, so a stream is identified by a readable path
such as ``derive_seed(7, "teacher", 3, "shuffle")``.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        if k < 0:
            raise ValueError("seed keys must be non-negative")
        return int(k)
    return zlib.crc32(str(k).encode())


def derive_seed(root: int, *keys) -> int:
    ss = np.random.SeedSequence(int(root), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def derive_rng(root: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *keys))
