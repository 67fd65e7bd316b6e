"""SWCE estimate files: a sequence of records, each a 16-byte header plus
float32 little-endian data in (H, W, C) flat order.

Header: "SWCE" | version u16 | H u16 | W u16 | C u16 | 4 pad bytes.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"SWCE"
VERSION = 1
_HEADER = struct.Struct("<4sHHHH4x")


class EstimateFileError(Exception):
    pass


def dumps(tensors) -> bytes:
    parts = []
    for t in tensors:
        h, w, c = t.shape
        parts.append(_HEADER.pack(MAGIC, VERSION, h, w, c))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(buf: bytes) -> list[np.ndarray]:
    out, off = [], 0
    while off < len(buf):
        if off + _HEADER.size > len(buf):
            raise EstimateFileError("truncated SWCE header")
        magic, version, h, w, c = _HEADER.unpack_from(buf, off)
        if magic != MAGIC:
            raise EstimateFileError("not an SWCE estimate file (bad magic)")
        if version != VERSION:
            raise EstimateFileError(f"SWCE version {version} unsupported")
        off += _HEADER.size
        n = h * w * c
        if off + 4 * n > len(buf):
            raise EstimateFileError("truncated SWCE payload")
        out.append(np.frombuffer(buf, "<f4", n, off).astype(np.float64).reshape(h, w, c))
        off += 4 * n
    if not out:
        raise EstimateFileError("empty SWCE file")
    return out


def write(path, tensors):
    with open(path, "wb") as f:
        f.write(dumps(tensors))


def read(path) -> list[np.ndarray]:
    with open(path, "rb") as f:
        return loads(f.read())
