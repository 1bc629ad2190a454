"""
Seeded, splittable random number generators.

All randomness flows through explicit ``numpy.random.Generator`` objects built
on the counter-based Philox bit generator; there is no global RNG state.
"""

from typing import List, Union

import numpy as np

SeedLike = Union[int, np.random.SeedSequence]


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Create a Philox-backed generator from an integer seed or a SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def spawn(seed: SeedLike, n: int) -> List[np.random.Generator]:
    """Split a seed into ``n`` statistically independent generators."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return [make_rng(child) for child in seed.spawn(n)]


def child_seed(rng: np.random.Generator) -> int:
    """Draw an integer seed for libraries that only accept ints."""
    return int(rng.integers(0, 2**31 - 1))
