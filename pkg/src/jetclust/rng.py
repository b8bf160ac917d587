"""Seedable, splittable random streams.

Philox is counter-based, so any number of independent streams can be
derived from one root seed via spawn keys without stream overlap.
Every stochastic operation in the package takes an explicit generator.
"""

import numpy as np


def make_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *key)."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))
