"""Counter-based generators keyed by ``(seed, key)``.

Each sample gets its own Philox stream, so a draw for one sample does not
depend on how many other samples were processed before it.
"""
from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def keyed_rng(seed: int, key: str) -> np.random.Generator:
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    digest = int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")
    return np.random.Generator(np.random.Philox(key=((seed & _MASK64) << 64) | digest))
