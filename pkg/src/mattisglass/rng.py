"""Keyed counter-based random streams (Philox).

Every consumer asks for ``stream(seed, purpose, *ids)``; the same key always
yields the same sequence regardless of call order or worker count.
"""
from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "purpose_id"]


def purpose_id(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def stream(seed: int, purpose: str, *ids: int) -> np.random.Generator:
    key = (purpose_id(purpose),) + tuple(int(i) & 0xFFFFFFFF for i in ids)
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(seq))
