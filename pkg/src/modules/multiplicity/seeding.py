"""
Hierarchical seed derivation.

Every random draw in the package goes through a ``numpy.random.SeedSequence``
whose ``spawn_key`` names the task (partition, draw, method, ...). Results
therefore depend only on the master seed and the task coordinates, never on
the order in which tasks are scheduled.
"""
from typing import Sequence, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]


def derive_seed(master_seed: int, *path: int) -> np.random.SeedSequence:
    """Return the seed sequence for the task at ``path`` under ``master_seed``."""
    return np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(p) for p in path))


def child_seed(seed: SeedLike, *path: int) -> np.random.SeedSequence:
    """Extend an existing seed with more task coordinates."""
    if isinstance(seed, np.random.Generator):
        raise TypeError("cannot derive a child seed from a Generator")
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(
            entropy=seed.entropy,
            spawn_key=tuple(seed.spawn_key) + tuple(int(p) for p in path),
        )
    return derive_seed(int(seed), *path)


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def seed_chain(seed: SeedLike) -> Sequence[int]:
    """Serialisable form of a seed: ``[entropy, *spawn_key]``."""
    if isinstance(seed, np.random.SeedSequence):
        entropy = seed.entropy if isinstance(seed.entropy, int) else 0
        return [int(entropy), *(int(k) for k in seed.spawn_key)]
    if isinstance(seed, np.random.Generator):
        return []
    return [int(seed)]


def int_seed(seed: SeedLike) -> int:
    """Collapse a seed into a single 32-bit integer (for configs that store one int)."""
    if isinstance(seed, np.random.Generator):
        return int(seed.integers(0, 2**32 - 1))
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed)
