"""TDAFCKPT named-tensor archive.

Layout, all integers little-endian::

    b"TDAFCKPT"                 magic, 8 bytes
    u32 version                 currently 1
    u32 entry count
    per entry:
        u16 name length, name bytes (utf-8)
        u8  ndim, ndim x u32 dims
        prod(dims) x f32 values
    u64 checksum                blake2b-64 of every preceding byte

Entries are written in the model's state order: parameters, then MFBN running
statistics (``<layer>.running_mean.flow<k>`` / ``<layer>.running_var.flow<k>``).
"""
from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

MAGIC = b"TDAFCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=8).digest()


def encode(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes(order="C"))
    payload = b"".join(parts)
    return payload + _checksum(payload)


def decode(blob: bytes) -> "OrderedDict[str, np.ndarray]":
    if len(blob) < 24 or blob[:8] != MAGIC:
        raise CheckpointError("not a TDAFCKPT file (bad magic)")
    payload, tail = blob[:-8], blob[-8:]
    if _checksum(payload) != tail:
        raise CheckpointError("checksum mismatch: file is corrupt or truncated")
    version, count = struct.unpack_from("<II", payload, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    state = OrderedDict()
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", payload, pos)
            pos += 2
            name = payload[pos : pos + nlen].decode("utf-8")
            pos += nlen
            (ndim,) = struct.unpack_from("<B", payload, pos)
            dims = struct.unpack_from(f"<{ndim}I", payload, pos + 1)
            pos += 1 + 4 * ndim
            size = int(np.prod(dims, dtype=np.int64))
            state[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=pos).reshape(dims).copy()
            pos += 4 * size
    except (struct.error, ValueError) as e:
        raise CheckpointError(f"malformed entry table: {e}") from e
    if pos != len(payload):
        raise CheckpointError(f"{len(payload) - pos} trailing bytes after last entry")
    return state


def save_checkpoint(path: str | Path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(state))


def load_checkpoint(path: str | Path) -> "OrderedDict[str, np.ndarray]":
    return decode(Path(path).read_bytes())
