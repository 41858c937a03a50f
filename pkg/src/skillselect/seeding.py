"""Deterministic seed derivation shared by every pipeline stage.

All randomness in the package flows through explicit integer seeds. Child
streams are derived from a root seed plus an integer path, so any sample,
rollout, or episode can be regenerated in isolation and results do not
depend on scheduling or collection order.
"""
from __future__ import annotations

import numpy as np

# Stream tags used as the first path element so that independent purposes
# never share a child stream even when the remaining indices collide.
STREAM_TERRAIN = 1
STREAM_SPAWN = 2
STREAM_NOISE = 3
STREAM_ROLLOUT = 4
STREAM_ASSIGN = 5
STREAM_SPLIT = 6
STREAM_INIT = 7
STREAM_SHUFFLE = 8
STREAM_EPISODE = 9


def seed_sequence(root: int, *path: int) -> np.random.SeedSequence:
    """Build a SeedSequence from a root seed and an integer derivation path."""
    entropy = (_as_seed(root),) + tuple(_as_seed(p) for p in path)
    return np.random.SeedSequence(entropy)


def make_rng(root: int, *path: int) -> np.random.Generator:
    """PCG64 generator for the (root, *path) child stream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(root, *path)))


def _as_seed(value: int) -> int:
    value = int(value)
    if value < 0:
        raise ValueError(f"seeds must be non-negative, got {value}")
    return value
