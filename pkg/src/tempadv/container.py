"""Versioned binary container for checkpoints and attack artifacts.

Byte layout, little-endian throughout:

    offset 0   magic           8 bytes  b"TADVCNT1"
    8          format version  u32
    12         metadata length u64
    20         metadata        UTF-8 JSON, sorted keys
    ...        array count     u32
    per array, sorted by name:
                 name length   u16
                 name          UTF-8
                 dtype tag     u8   (0 = float64, 1 = int64)
                 ndim          u8
                 dims          u64 * ndim
                 raw data      C-order little-endian
    end        SHA-256 of every preceding byte   32 bytes

Loading verifies magic, version, and the trailing hash; any mismatch or
truncation raises IntegrityError rather than crashing downstream.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import IntegrityError

MAGIC = b"TADVCNT1"
FORMAT_VERSION = 1

_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8")}
_TAGS = {np.dtype("float64"): 0, np.dtype("int64"): 1}


def save_container(path: str | Path, metadata: dict, arrays: dict[str, np.ndarray]) -> str:
    """Write the container; returns its content hash (hex)."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", FORMAT_VERSION)
    meta = json.dumps(metadata, sort_keys=True, ensure_ascii=False).encode("utf-8")
    buf += struct.pack("<Q", len(meta))
    buf += meta
    buf += struct.pack("<I", len(arrays))
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        if a.dtype not in _TAGS:
            a = a.astype(np.float64)
        raw = a.astype(_DTYPES[_TAGS[a.dtype]], copy=False)
        nb = name.encode("utf-8")
        buf += struct.pack("<H", len(nb))
        buf += nb
        buf += struct.pack("<BB", _TAGS[a.dtype], a.ndim)
        for d in a.shape:
            buf += struct.pack("<Q", d)
        buf += raw.tobytes()
    digest = hashlib.sha256(bytes(buf)).digest()
    buf += digest
    Path(path).write_bytes(bytes(buf))
    return digest.hex()


class _Reader:
    def __init__(self, data: bytes, path) -> None:
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise IntegrityError(f"{self.path}: truncated container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray], str]:
    """Read and verify a container; returns (metadata, arrays, content hash)."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 32:
        raise IntegrityError(f"{path}: truncated container")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError(f"{path}: content hash mismatch")
    r = _Reader(body, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise IntegrityError(f"{path}: bad magic bytes")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise IntegrityError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    (meta_len,) = r.unpack("<Q")
    try:
        metadata = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise IntegrityError(f"{path}: corrupt metadata block ({e})") from None
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        tag, ndim = r.unpack("<BB")
        if tag not in _DTYPES:
            raise IntegrityError(f"{path}: unknown dtype tag {tag}")
        shape = tuple(r.unpack("<" + "Q" * ndim)) if ndim else ()
        n_items = int(np.prod(shape)) if shape else 1
        raw = r.take(n_items * 8)
        arrays[name] = np.frombuffer(raw, dtype=_DTYPES[tag]).reshape(shape).copy()
    if r.pos != len(body):
        raise IntegrityError(f"{path}: {len(body) - r.pos} trailing bytes after arrays")
    return metadata, arrays, digest.hex()
