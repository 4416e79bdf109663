"""Reproducible random streams.

All randomness goes through Philox, numpy's counter-based generator, so
instances and traces are identical across platforms for a given seed.
"""

import numpy as np

PRNG_NAME = "numpy.random.Philox"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def derive_seeds(base_seed: int, count: int) -> list[int]:
    """Deterministic, well-separated child seeds for independent runs."""
    state = np.random.SeedSequence(base_seed).generate_state(count, dtype=np.uint64)
    return [int(s) for s in state]
