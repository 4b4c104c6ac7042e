"""Reproducible random streams.

Every stream is a Philox4x64-10 counter-based generator keyed through
``numpy.random.SeedSequence(master_seed, spawn_key=key)``. A stream is thus a
pure function of ``(master_seed, key)``; two different keys never share
state, which is what lets per-point and per-chunk sampling run in any order
(or in parallel) and still produce identical bytes.
"""

from __future__ import annotations

import zlib

import numpy as np

GENERATOR_ID = "philox4x64-10/seedsequence"


def _key_word(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    if part < 0:
        raise ValueError(f"stream key components must be non-negative, got {part}")
    return int(part)


def stream(seed: int, *key: int | str) -> np.random.Generator:
    """Return the generator identified by ``(seed, *key)``.

    String key components are hashed with CRC-32 so call sites can use
    readable labels (``stream(seed, "test", 3)``).
    """
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return np.random.Generator(np.random.Philox(seq))


def child_seed(seed: int, *key: int | str) -> int:
    """Derive a 63-bit integer seed for a sub-experiment."""
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(_key_word(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
