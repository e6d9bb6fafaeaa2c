"""Deterministic per-stage random streams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np

STAGES = ("sapg", "mala", "rebalance_sapg", "rebalance_mala")


def stage_seed(master: int, stage: str) -> np.random.SeedSequence:
    """Seed sequence for ``stage``; independent of every other stage name."""
    return np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(stage.encode()),))


def stage_rng(master: int, stage: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stage_seed(master, stage)))
