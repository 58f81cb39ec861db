"""Stable per-record seeds.

Every random choice in a build is drawn from a ``random.Random`` seeded by a
digest of (global seed, doc id, task, ...), so output never depends on how
work is scheduled across workers.
"""
from __future__ import annotations

import hashlib
import random

U64_MASK = (1 << 64) - 1


def derive_seed(global_seed: int, *parts: object) -> int:
    h = hashlib.sha256()
    h.update(str(int(global_seed) & U64_MASK).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def rng_for(seed: int) -> random.Random:
    return random.Random(seed)
