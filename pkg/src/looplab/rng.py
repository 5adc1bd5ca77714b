"""Deterministic, splittable random streams.

Every sampler takes an explicit generator. Streams are derived from a
root seed plus a tuple of keys (strings or ints), so workers, batches
and eval passes each get an independent stream that is reproducible
without checkpointing generator state: the keys fully identify it.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *keys: int | str) -> int:
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode())
    for k in keys:
        h.update(b"|")
        h.update(repr(k).encode())
    return int.from_bytes(h.digest()[:8], "little")


def derive_rng(root_seed: int, *keys: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root_seed, *keys))
