"""Determinism helpers: stable serialization, hashing, seed derivation."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable

import numpy as np


def stable_json_dumps(obj) -> str:
    """Canonical JSON: sorted keys, no whitespace drift, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_arrays(arrays: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def derive_seed(master_seed: int, stream: str) -> int:
    """Fan a master seed out to named per-stage seeds.

    Splitmix64 finalizer over (master_seed ^ sha256(stream)); documented so
    stages can be re-run in isolation with the exact seed a recipe used.
    """
    tag = int.from_bytes(hashlib.sha256(stream.encode()).digest()[:8], "little")
    z = (int(master_seed) ^ tag) & 0xFFFFFFFFFFFFFFFF
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return (z ^ (z >> 31)) & 0x7FFFFFFFFFFFFFFF
