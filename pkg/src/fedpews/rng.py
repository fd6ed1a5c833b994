"""Replayable random streams keyed by (seed, purpose, *indices).

Every random draw in a run comes from a stream named by what it is for
(``"mask"``, ``"batch"``, ...) and where it happens (participant, round,
step). Streams do not share state, so execution order never changes results.
"""
from __future__ import annotations

import zlib

import numpy as np


def _word(key) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode())
    key = int(key)
    if key < 0:
        raise ValueError(f"stream keys must be non-negative, got {key}")
    return key


def stream(seed: int, purpose: str, *indices) -> np.random.Generator:
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_word(k) for k in (purpose, *indices)))
    return np.random.Generator(np.random.PCG64(seq))
