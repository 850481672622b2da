"""Deterministic seed fan-out.

One top-level run seed is XOR-ed with a fixed per-purpose constant to give
each consumer (weight init, shuffling, dropout, splitting, sweeping, ...) an
independent stream. Epoch- or trial-scoped generators extend the derived
seed with the index, so any epoch can be replayed without running the ones
before it.
"""

import numpy as np

MASK64 = (1 << 64) - 1

SEED_INIT = 0x9E3779B97F4A7C15
SEED_SHUFFLE = 0xBF58476D1CE4E5B9
SEED_DROPOUT = 0x94D049BB133111EB
SEED_SWEEP = 0xD6E8FEB86659FD93
SEED_SPLIT = 0x2545F4914F6CDD1D
SEED_SUBSET = 0x853C49E6748FEA9B


def derive(seed: int, purpose: int) -> int:
    """Sub-seed for one named purpose: (seed XOR purpose) masked to 64 bits."""
    return (int(seed) ^ purpose) & MASK64


def stream_rng(seed: int, purpose: int, *index: int) -> np.random.Generator:
    """Generator for (seed, purpose) extended by optional indices (epoch, trial)."""
    return np.random.default_rng([derive(seed, purpose), *index])
