"""Named random substreams derived from one master seed.

Every consumer of randomness asks for a generator keyed by a tuple such as
``("signal", client, index)``. The Philox counter-based bit generator keeps
streams independent, so serial and parallel evaluation agree bit-for-bit.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part) -> int:
    if isinstance(part, (bool, np.bool_)):
        return int(part)
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"substream keys must be non-negative, got {part}")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def substream(seed: int, *keys) -> np.random.Generator:
    """Return an independent generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def child_seeds(rng: np.random.Generator, count: int) -> np.ndarray:
    """Draw ``count`` 63-bit seeds for per-item generators."""
    return rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)
