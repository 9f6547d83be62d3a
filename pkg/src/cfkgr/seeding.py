"""Seeded random substreams.

Every random draw in the package comes from a generator returned by
:func:`substream`, keyed by a top-level seed plus a path of labels, so a
partial pipeline reproduces the same numbers as the full one.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key_words(keys: tuple) -> list[int]:
    digest = hashlib.sha256("\x1f".join(str(k) for k in keys).encode("utf-8")).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


def substream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``; stable across runs and platforms."""
    if not keys:
        return np.random.default_rng(int(seed))
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *_key_words(keys)])
