"""Binary snapshot files.

Layout (all integers little-endian)::

    magic      4 bytes  b"QSNP"
    version    u16
    n_rows     u32
    n_cols     u32
    count      u64
    meta_len   u32
    meta       meta_len bytes of UTF-8 JSON
    payload    count records of ceil(n_rows * n_cols / 8) bytes

Each record holds one snapshot flattened row-major and packed with the
first bit in the least significant position of its byte.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"QSNP"
VERSION = 1
_HEADER = struct.Struct("<4sHIIQI")


def encode(snapshots, metadata=None) -> bytes:
    snaps = np.asarray(snapshots)
    if snaps.ndim == 2:
        snaps = snaps[:, None, :]
    if snaps.ndim != 3:
        raise ValueError(f"expected [count, n_rows, n_cols] snapshots, got shape {snaps.shape}")
    if snaps.size and not np.isin(snaps, (0, 1)).all():
        raise ValueError("snapshots must be binary")
    count, n_rows, n_cols = snaps.shape
    meta = json.dumps(metadata or {}, sort_keys=True).encode()
    payload = np.packbits(snaps.reshape(count, n_rows * n_cols).astype(np.uint8), axis=1, bitorder="little")
    return _HEADER.pack(MAGIC, VERSION, n_rows, n_cols, count, len(meta)) + meta + payload.tobytes()


def decode(blob: bytes):
    if len(blob) < _HEADER.size:
        raise ValueError("truncated snapshot header")
    magic, version, n_rows, n_cols, count, meta_len = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported snapshot file version {version}")
    start = _HEADER.size
    meta = json.loads(blob[start:start + meta_len].decode())
    nbytes = (n_rows * n_cols + 7) // 8
    body = np.frombuffer(blob, dtype=np.uint8, offset=start + meta_len)
    if body.size != count * nbytes:
        raise ValueError(f"payload holds {body.size} bytes, expected {count * nbytes}")
    bits = np.unpackbits(body.reshape(count, nbytes), axis=1, count=n_rows * n_cols, bitorder="little")
    return bits.reshape(count, n_rows, n_cols), meta


def write_snapshots(path, snapshots, metadata=None):
    Path(path).write_bytes(encode(snapshots, metadata))


def read_snapshots(path):
    """Return ``(snapshots uint8 [count, n_rows, n_cols], metadata dict)``."""
    return decode(Path(path).read_bytes())
