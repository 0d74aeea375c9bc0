"""Seed derivation.

Every random stream in the simulator is a ``numpy.random.Generator`` over
PCG64.  Child streams are derived from the master seed plus a tuple of
integer keys (replication index, client index, experiment tag, ...) through
``SeedSequence``, so a stream depends only on its key path and never on the
order in which other streams were created.
"""

from __future__ import annotations

import numpy as np

# Stream tags, used as the second key of derive_rng().
NETWORK = 1
CLIENT = 2
ORACLE = 3
HEATMAP = 4
GOSSIP = 5
SCENE = 6


def seed_sequence(master_seed: int, *keys: int) -> np.random.SeedSequence:
    if master_seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and stream keys must be non-negative")
    return np.random.SeedSequence([int(master_seed), *map(int, keys)])


def derive_rng(master_seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream ``(master_seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *keys)))


def as_generator(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.Generator(np.random.PCG64(rng))
