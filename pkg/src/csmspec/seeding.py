"""Deterministic seed splitting.

One master seed drives every randomized stage. Child streams are derived
by a counter-based rule so any stage (or any single bootstrap resample or
rollout) can be recomputed in isolation:

    child = numpy.random.SeedSequence(master_seed, spawn_key=(stage, index, ...))

``stage`` is one of the fixed integer keys below; further path elements
index the unit of work inside the stage. Generators are PCG64.
"""

from __future__ import annotations

import numpy as np

# Fixed stage keys; append only, never renumber.
STAGE_SYNTH = 0
STAGE_SIMULATE = 1
STAGE_ULAM = 2
STAGE_COLLAPSE = 3
STAGE_BOOTSTRAP = 4
STAGE_SPLIT = 5
STAGE_SKELETON = 6
STAGE_ADIABATIC = 7


def seed_sequence(master_seed: int, *path: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(p) for p in path))


def child_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Generator for one unit of work, addressed by (stage, index, ...)."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master_seed, *path)))


def child_seed_int(master_seed: int, *path: int) -> int:
    """Plain integer seed for APIs that take one; same derivation rule."""
    return int(seed_sequence(master_seed, *path).generate_state(1, np.uint64)[0])
