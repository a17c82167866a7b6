"""Binary checkpoint container for named fp64 tensors.

Layout (all integers little-endian)::

    magic      8 bytes   b"DCKPT\\x00\\x00\\x01"
    version    u32       FORMAT_VERSION
    meta_len   u32       length of the UTF-8 JSON metadata blob
    meta       meta_len bytes
    count      u32       number of tensors
    repeated count times:
        name_len  u16
        name      name_len bytes, UTF-8
        ndim      u8
        dims      ndim x u32
        payload   prod(dims) x f64 (little-endian, row-major)
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DCKPT\x00\x00\x01"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(tensors: dict[str, np.ndarray], meta: dict | None = None) -> bytes:
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        if not np.isfinite(arr).all():
            raise CheckpointError(f"refusing to save non-finite tensor {name!r}")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def loads(buf: bytes) -> tuple[dict[str, np.ndarray], dict]:
    if buf[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version, meta_len = struct.unpack_from("<II", buf, 8)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    off = 16
    meta = json.loads(buf[off : off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", buf, off)
    off += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, off)
        off += 4 * ndim
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
        tensors[name] = arr
    if off != len(buf):
        raise CheckpointError("trailing bytes after last tensor")
    return tensors, meta


def save(path: str | os.PathLike, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps(tensors, meta))
    os.replace(tmp, path)


def load(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    return loads(Path(path).read_bytes())
