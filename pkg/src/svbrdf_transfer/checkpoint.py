"""Versioned binary checkpoint files.

Layout (little-endian)::

    magic        8 bytes  b"SVBXCKPT"
    catalog      u32      op-catalog version
    meta_len     u32      length of the JSON metadata block
    meta         bytes    UTF-8 JSON (network config, seed, ...)
    count        u32      number of tensors
    per tensor:  u16 name length, name, u8 ndim, u32 extents, float32 data
    checksum     u64      first 8 bytes of BLAKE2b over everything above
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .autodiff import CATALOG_VERSION

MAGIC = b"SVBXCKPT"


class CheckpointError(ValueError):
    pass


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def dumps(params: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<II", CATALOG_VERSION, len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(params))]
    for name, value in params.items():
        a = np.ascontiguousarray(value, dtype="<f4")
        raw_name = name.encode()
        parts.append(struct.pack("<H", len(raw_name)) + raw_name + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    payload = b"".join(parts)
    return payload + _checksum(payload)


def loads(blob: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if blob[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if len(blob) < len(MAGIC) + 8:
        raise CheckpointError("checksum mismatch: file truncated")
    payload, stored = blob[:-8], blob[-8:]
    if _checksum(payload) != stored:
        raise CheckpointError("checksum mismatch: file corrupted or truncated")
    off = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", payload, off)
    off += 8
    if version != CATALOG_VERSION:
        raise CheckpointError(f"op-catalog version mismatch: file has {version}, expected {CATALOG_VERSION}")
    meta = json.loads(payload[off:off + meta_len].decode())
    off += meta_len
    (count,) = struct.unpack_from("<I", payload, off)
    off += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, off)
        off += 2
        name = payload[off:off + name_len].decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", payload, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, off)
        off += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
        off += 4 * size
    return params, meta


def save(path, params: dict[str, np.ndarray], meta: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(params, meta))
    return path


def load(path) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
