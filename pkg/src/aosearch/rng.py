"""Seed derivation and the portable random generator.

All randomness goes through numpy's ``Philox4x32-10`` counter-based bit
generator. A stream is keyed by a 128-bit BLAKE2b digest of the seed and a
tuple of role tags, so results never depend on call order.
"""

from __future__ import annotations

import hashlib

import numpy as np

GENERATOR_NAME = "Philox4x32-10"


def _digest(seed: int, tags: tuple) -> bytes:
    text = repr((int(seed),) + tuple(tags)).encode()
    return hashlib.blake2b(text, digest_size=16).digest()


def derive_seed(seed: int, *tags) -> int:
    """64-bit child seed for a named role, e.g. ``derive_seed(7, "forest")``."""
    return int.from_bytes(_digest(seed, tags)[:8], "little")


def generator(seed: int, *tags) -> np.random.Generator:
    key = int.from_bytes(_digest(seed, tags), "little")
    return np.random.Generator(np.random.Philox(key=key))
