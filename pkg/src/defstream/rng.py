"""Named, reproducible random streams derived from one master seed.

Every source of randomness in a run (data generation, weight init, batch
shuffling, augmentation draws, attack random starts) pulls from a stream
addressed by a name plus integer indices.  Stream seeds are pure functions
of (master_seed, name, *indices), so resuming a run at any stage boundary
reproduces the uninterrupted run bit-exactly without saving generator
state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(master_seed: int, name: str, *indices: int) -> int:
    """Derive a 64-bit seed for the stream (name, *indices)."""
    key = ":".join([str(int(master_seed)), name] + [str(int(i)) for i in indices])
    digest = hashlib.blake2b(key.encode("ascii"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(master_seed: int, name: str, *indices: int) -> np.random.Generator:
    """Generator for the named sub-stream; identical inputs give identical draws."""
    return np.random.default_rng(stream_seed(master_seed, name, *indices))
