"""Seed derivation.

Every random stream is a PCG64 generator keyed by the user seed plus a fixed
stream id (and optional extra integers such as a trial index), mixed through
``numpy.random.SeedSequence(seed, spawn_key=(stream_id, *extra))``. Streams
are therefore independent of each other and reproducible across platforms.
"""
from __future__ import annotations

import numpy as np

STREAMS = {
    "split": 1,
    "init": 2,
    "train": 3,
    "validation": 4,
    "synth": 5,
    "trial": 6,
}


def _sequence(seed: int, stream: str, extra) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(int(seed), spawn_key=(STREAMS[stream], *map(int, extra)))


def derive_rng(seed: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(_sequence(seed, stream, extra)))


def derive_seed(seed: int, stream: str, *extra: int) -> int:
    """A 63-bit child seed, for handing to code that takes a plain integer."""
    return int(_sequence(seed, stream, extra).generate_state(1, np.uint64)[0] >> np.uint64(1))
