"""Addressable random streams.

Every draw is identified by ``(seed, tag, index)``: the Philox key is built
from the seed and a hash of the tag, and the index sits in the top word of
the counter.  Two addresses never share a stream, and any single address can
be regenerated without replaying the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def tag_key(tag: str) -> int:
    return int.from_bytes(hashlib.blake2b(tag.encode("utf-8"), digest_size=8).digest(), "little")


def generator(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Fresh generator for the address (seed, tag, index)."""
    if index < 0:
        # negative time indices map to the upper half of the 64-bit range
        index += 1 << 64
    key = np.array([int(seed) & _MASK64, tag_key(tag)], dtype=np.uint64)
    counter = np.array([0, 0, 0, int(index) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def normals(seed: int, tag: str, index: int, shape) -> np.ndarray:
    return generator(seed, tag, index).standard_normal(shape)


def derive_seed(seed: int, tag: str) -> int:
    """Stable 64-bit child seed."""
    h = hashlib.blake2b(f"{int(seed) & _MASK64}:{tag}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(h, "little")
