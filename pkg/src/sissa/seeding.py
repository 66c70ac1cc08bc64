"""Stable per-stage seeds: hash(global seed, stage name, block index)."""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(global_seed: int, stage: str, index: int = 0) -> int:
    """63-bit seed that depends only on its arguments (never on worker
    count or scheduling order)."""
    msg = f"{int(global_seed)}/{stage}/{int(index)}".encode()
    return int.from_bytes(hashlib.blake2b(msg, digest_size=8).digest(), "little") >> 1


def stage_rng(global_seed: int, stage: str, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(derive_seed(global_seed, stage, index))
