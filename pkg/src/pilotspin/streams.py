"""Per-unit random streams.

Every particle (or pair) gets its own Philox generator keyed by
(seed, experiment tag, experiment index, unit id) through numpy's
SeedSequence, so a unit's draws never depend on how work is scheduled.
"""
from __future__ import annotations

import os

import numpy as np

SEED_ENV = "PILOTSPIN_SEED"
DEFAULT_SEED = 20100727

# experiment tags, part of every spawn key
SG = 1
EPR = 2


def default_seed() -> int:
    value = os.environ.get(SEED_ENV)
    return int(value) if value else DEFAULT_SEED


def unit_generator(seed: int, tag: int, experiment: int, unit: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(tag, experiment, int(unit)))
    return np.random.Generator(np.random.Philox(ss))


def standard_draws(seed: int, tag: int, experiment: int, units, n_normal: int, n_uniform: int):
    """Per-unit (normals, uniforms) arrays of shapes (len(units), n_normal/n_uniform).

    Normals are drawn before uniforms from each unit's own stream.
    """
    units = list(units)
    normals = np.empty((len(units), n_normal))
    uniforms = np.empty((len(units), n_uniform))
    for row, unit in enumerate(units):
        g = unit_generator(seed, tag, experiment, unit)
        normals[row] = g.standard_normal(n_normal)
        uniforms[row] = g.random(n_uniform)
    return normals, uniforms
