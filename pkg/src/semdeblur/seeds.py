"""Deterministic RNG derivation.

Every randomized stage derives its generator from (base seed, salts) via
SeedSequence, so any value is a pure function of the seed and its position
in the run: resuming at iteration t replays iteration t's randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def _salt_words(salts) -> list[int]:
    words = []
    for s in salts:
        if isinstance(s, str):
            words.append(zlib.crc32(s.encode()))
        elif isinstance(s, (int, np.integer)):
            words.append(int(s) & 0xFFFFFFFF)
            words.append((int(s) >> 32) & 0xFFFFFFFF)
        else:
            raise TypeError(f"unsupported salt type {type(s).__name__}")
    return words


def rng_for(seed: int, *salts) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + _salt_words(salts)))


def derive_seed(seed: int, *salts) -> int:
    """A stable 32-bit child seed for storing in manifests."""
    ss = np.random.SeedSequence([int(seed)] + _salt_words(salts))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
