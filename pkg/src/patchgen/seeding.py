"""Deterministic RNG streams keyed by role.

Every random draw in the package comes from a generator derived from the run
seed plus a structured integer key. A draw at (scale, iteration) never depends
on earlier history, so training can resume at any scale boundary and reproduce
the uninterrupted run exactly.
"""
from __future__ import annotations

import numpy as np

# Stream domains (first key element).
INIT = 0  # parameter initialization
TRAIN = 1  # per-iteration training noise
SAMPLE = 2  # post-training sampling
METRIC = 3  # metric subsampling and probe features


def stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for (seed, key). Same inputs, same stream."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))
