"""Deterministic random-number streams derived from one master seed.

Every stochastic routine takes either an explicit Generator or a
(seed, *path) pair routed through substream().  Identical arguments give
identical streams on any platform and at any worker count, which is what
makes whole runs bit-reproducible.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _words(part: int | str) -> tuple[int, ...]:
    """Encode one path component as uint32 words for a SeedSequence spawn key."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"negative stream index: {part}")
        lo, hi = int(part) & 0xFFFFFFFF, int(part) >> 32
        return (lo, hi) if hi else (lo,)
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=8).digest()
    return (
        int.from_bytes(digest[:4], "little"),
        int.from_bytes(digest[4:], "little"),
    )


def substream(seed: int, *path: int | str) -> np.random.Generator:
    """Return the Generator for the named stream (seed, *path)."""
    key = tuple(w for part in path for w in _words(part))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))
