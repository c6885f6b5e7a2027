"""Named, reproducible random streams.

Every stage draws from its own stream derived from (base seed, stage name),
so any stage can be replayed in isolation and checkpoint resume is exact.
"""

from __future__ import annotations

import zlib

import numpy as np

def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """A generator keyed by the base seed, a stage name, and optional indices."""
    key = [int(seed), zlib.crc32(name.encode())] + [int(e) for e in extra]
    return np.random.default_rng(np.random.SeedSequence(key))
