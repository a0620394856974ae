"""Named random substreams derived from a single run seed.

Each consumer (vocabulary shuffling, triplet sampling, pool building,
dropout masks) pulls from its own generator so adding draws in one place
never shifts the sequence seen by another.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for the (seed, name) pair; stable across processes."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
