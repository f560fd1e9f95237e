"""Deterministic seed derivation.

All randomness in the toolkit flows through ``rng_from`` so a run is
a pure function of its seed parts.  Seeds compose as tuples of
non-negative integers, e.g. (master, profile_index, noise_index);
derived streams are independent of the order in which they are drawn,
which is what makes parallel and serial execution bit-identical.
"""

from __future__ import annotations

import numpy as np


def seed_parts(seed) -> tuple:
    """Normalize an int or tuple-of-ints seed to a tuple."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(s) for s in seed)
    return (int(seed),)


def rng_from(*parts) -> np.random.Generator:
    """Generator seeded from the flattened integer parts."""
    flat = []
    for p in parts:
        flat.extend(seed_parts(p))
    return np.random.default_rng(np.random.SeedSequence(tuple(flat)))
