"""Seeded, counter-based random substreams.

Every stream is a Philox generator keyed by ``(seed, *keys)`` through
``numpy.random.SeedSequence``, so a stream never depends on how many other
streams exist or in which order they are consumed.
"""

from __future__ import annotations

import numpy as np

MAX_SEED = 2**64 - 1


def _check(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(_check(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(_check(seed), spawn_key=tuple(int(k) for k in keys))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)
