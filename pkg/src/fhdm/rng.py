"""Deterministic random substreams.

Every random draw in fhdm descends from one 64-bit master seed.  A
substream is addressed by a tuple of keys (strings or integers); string
keys are hashed with BLAKE2b so that the same component name always
yields the same stream regardless of call order.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def _key_words(key) -> list[int]:
    if isinstance(key, (int, np.integer)):
        k = int(key) & MASK64
        return [k & 0xFFFFFFFF, k >> 32]
    digest = hashlib.blake2b(str(key).encode(), digest_size=8).digest()
    k = int.from_bytes(digest, "little")
    return [k & 0xFFFFFFFF, k >> 32]


def seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    words = _key_words(seed)
    for key in keys:
        words.extend(_key_words(key))
    return np.random.SeedSequence(words)


def substream(seed: int, *keys) -> np.random.Generator:
    """Generator for the substream ``(seed, *keys)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def as_seed(rng_or_seed) -> int:
    """Draw a 64-bit seed from a Generator, or pass an int through."""
    if isinstance(rng_or_seed, np.random.Generator):
        return int(rng_or_seed.integers(0, 2**63 - 1))
    return int(rng_or_seed) & MASK64
