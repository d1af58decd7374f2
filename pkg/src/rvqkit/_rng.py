"""Seed handling helpers."""

from __future__ import annotations

import numpy as np

SeedLike = "int | np.random.Generator"


def as_generator(seed) -> np.random.Generator:
    """Return `seed` unchanged if it is already a Generator, else seed a fresh one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
