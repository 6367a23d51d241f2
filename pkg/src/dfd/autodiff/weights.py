"""DFDW flat weight files.

Layout: b"DFDW", one version byte, then per tensor: u32 name length, UTF-8
name, u32 rank, u32 dims, row-major little-endian float32 data. All
integers little-endian. Records run to end of file.
"""
from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from ..errors import DecodeError

MAGIC = b"DFDW"
VERSION = 1


def dumps(tensors: dict) -> bytes:
    out = [MAGIC, bytes([VERSION])]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f4")
        key = name.encode("utf-8")
        out.append(struct.pack("<I", len(key)))
        out.append(key)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(out)


def loads(buf: bytes) -> dict:
    if buf[:4] != MAGIC:
        raise DecodeError("not a DFDW file")
    if buf[4] != VERSION:
        raise DecodeError(f"unsupported DFDW version {buf[4]}")
    pos, out = 5, {}
    try:
        while pos < len(buf):
            (n,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(dims)
            pos += 4 * count
            out[name] = arr.astype(np.float32)
    except (struct.error, ValueError) as exc:
        raise DecodeError(f"truncated DFDW payload: {exc}") from exc
    return out


def save(path, tensors: dict) -> str:
    """Write and return the sha256 hex digest of the file."""
    buf = dumps(tensors)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(buf)
    return hashlib.sha256(buf).hexdigest()


def load(path) -> dict:
    return loads(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
