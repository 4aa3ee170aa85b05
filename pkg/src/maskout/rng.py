"""Reproducible counter-based random substreams.

Every Monte Carlo quantity in this package draws from a generator keyed by
(seed, *path), where the path identifies the work item (row, variable, repeat,
...). Work items therefore get statistically independent streams whose values
do not depend on evaluation order or thread count, and criteria that must
share draws (e.g. the variable-wise decomposition of the masking risk) simply
use the same path.
"""
from __future__ import annotations

import numpy as np

__all__ = ["substream"]


def substream(seed: int, *path: int) -> np.random.Generator:
    """Generator for the substream identified by (seed, *path).

    Paths of different lengths never collide: SeedSequence hashes the entire
    spawn key, so (5, 2) and (5, 2, 0) are distinct streams.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
