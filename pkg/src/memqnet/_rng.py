"""Deterministic seed derivation for replications and per-agent streams."""

import numpy as np

_MASK64 = (1 << 64) - 1


def hash64(seed: int, index: int) -> int:
    """Stable 64-bit mix of (seed, index), splitmix64-style.

    Adding replications or agents never perturbs streams derived for
    earlier indices.
    """
    x = (seed & _MASK64) ^ ((index & _MASK64) * 0x9E3779B97F4A7C15 & _MASK64)
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK64
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for stream ``index`` under a master seed."""
    return np.random.default_rng(hash64(seed, index))
