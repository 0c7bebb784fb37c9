"""Seeded generators.

Every stochastic routine takes an explicit integer seed.  Sub-streams are
derived by appending integer keys to the seed, so a cell of a sweep gets the
same stream no matter which worker runs it.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, *keys)``."""
    if seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed}")
    entropy = [int(seed) & SEED_MASK, *(int(k) for k in keys)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed of ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & SEED_MASK, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
