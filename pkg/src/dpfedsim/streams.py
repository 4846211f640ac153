"""Named deterministic random streams.

Every random draw in the library comes from a Philox generator keyed by a
master seed plus a label path such as ``("client", 3, 12, 0)``.  Philox is
counter based, so streams are independent of execution order: simulating
clients sequentially, in any order, or in parallel yields identical draws.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream"]


def _digest(master_seed: int, path: tuple) -> int:
    h = hashlib.blake2b(digest_size=16)
    h.update(str(int(master_seed)).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest(), "little")


def stream(master_seed: int, *path: int | str) -> np.random.Generator:
    """Return the generator for the stream named by ``path`` under a master seed.

    The same (seed, path) pair always yields a generator in the same state.
    Distinct paths give statistically independent streams (128-bit keys).
    """
    if master_seed < 0:
        raise ValueError("master_seed must be a non-negative integer")
    key = _digest(master_seed, path)
    return np.random.Generator(np.random.Philox(key=key))
