"""Splittable seeded random streams.

Every random draw in the package comes from a generator keyed by
``(seed, *key)``.  Streams with different keys are statistically independent,
and the same key always reproduces the same stream, so work can be split into
fixed-size chunks and evaluated in any order or on any number of threads.
"""
from __future__ import annotations

import numpy as np

# stream tags
TWB = 1
IDLER = 2
SIGNAL = 3
NOISE = 4
BOOTSTRAP = 5
ATTACK = 6
KEY = 7
TRACE = 8
PARAMS = 9


def substream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for ``seed`` and integer ``key`` path."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def as_seed(seed_or_rng) -> int:
    """Reduce an int or a Generator to an integer seed.

    Passing a Generator consumes one draw from it, so repeated calls on the
    same generator give different (but reproducible) seeds.
    """
    if isinstance(seed_or_rng, np.random.Generator):
        return int(seed_or_rng.integers(0, 2**63 - 1))
    if isinstance(seed_or_rng, (int, np.integer)):
        if seed_or_rng < 0:
            raise ValueError("seed must be non-negative")
        return int(seed_or_rng)
    raise TypeError(f"expected int seed or numpy Generator, got {type(seed_or_rng).__name__}")


def as_generator(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return substream(as_seed(seed_or_rng))


def derive_seed(seed: int, *key: int) -> int:
    """Integer seed for an independent sub-experiment of ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0] >> 1)
