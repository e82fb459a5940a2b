"""Seeded random substreams.

Everything stochastic in the package draws from a PCG64 generator derived
from a master seed plus a key tuple, so any (seed, key) pair yields the same
byte stream on every platform and changing one consumer's draws can never
shift another's.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key_words(part: object) -> tuple[int, ...]:
    """Map one key part to uint32 words for a SeedSequence spawn key."""
    if isinstance(part, bool):
        return (int(part),)
    if isinstance(part, int):
        # split into non-negative 32-bit words; offset keeps negatives distinct
        value = part if part >= 0 else (1 << 63) + (-part)
        return (value & 0xFFFFFFFF, (value >> 32) & 0xFFFFFFFF)
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return tuple(int.from_bytes(digest[i : i + 4], "big") for i in range(0, 16, 4))
    raise TypeError(f"unsupported substream key part: {part!r}")


def substream(master_seed: int, *key: object) -> np.random.Generator:
    """Return the generator for `key` under `master_seed`.

    Distinct keys give statistically independent streams; the same key always
    gives the same stream.
    """
    words: list[int] = []
    for part in key:
        words.extend(_key_words(part))
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(words))
    return np.random.Generator(np.random.PCG64(seq))
