"""
Named sub-seeding: each module draws from its own stream derived from the
master seed, so changes in one module do not perturb randomness elsewhere.
"""

import hashlib

import numpy as np


def stream_key(name: str) -> int:
    """Stable 32-bit key for a stream name (independent of PYTHONHASHSEED)."""
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:4], "little")


def seed_sequence(master_seed: int, name: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(stream_key(name), *[int(k) for k in keys]))


def module_rng(master_seed: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, name, *keys))


def derived_seed(master_seed: int, name: str, *keys: int) -> int:
    """64-bit integer seed for objects that record their own seed (environments)."""
    return int(seed_sequence(master_seed, name, *keys).generate_state(1, dtype=np.uint64)[0])
