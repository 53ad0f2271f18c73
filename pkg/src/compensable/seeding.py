"""Named random streams derived from one global seed.

``stream(seed, "scene", 3)`` always yields the same generator, and adding a new
label never shifts the numbers another label produces.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_seed(seed: int, *labels) -> int:
    key = ":".join([str(int(seed))] + [str(v) for v in labels]).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def stream(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(stream_seed(seed, *labels))
