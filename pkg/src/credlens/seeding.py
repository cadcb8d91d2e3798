"""Deterministic seed fan-out.

A single run seed is expanded into per-stage and per-instance seeds so that
adding an instance to a batch never perturbs any other instance's draws.
"""
import zlib

import numpy as np


def derive_seed(root_seed: int, stage: str, index: int = 0) -> int:
    """Stable 32-bit seed for (root seed, stage name, instance index)."""
    tag = zlib.crc32(stage.encode("utf-8"))
    seq = np.random.SeedSequence([int(root_seed) & 0xFFFFFFFFFFFFFFFF, tag, int(index)])
    return int(seq.generate_state(1)[0])


def rng_for(root_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, stage, index))
