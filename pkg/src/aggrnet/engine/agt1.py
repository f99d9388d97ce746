"""AGT1 tensor container.

Layout: ``b"AGT1"``, u8 dtype code (0=f32, 1=f64, 2=i64), u8 rank r,
r little-endian u64 extents, then the raw little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import BinaryIO

import numpy as np

from ..errors import IntegrityError

MAGIC = b"AGT1"
_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_BY_KIND = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    try:
        code = _BY_KIND[array.dtype.newbyteorder("=")]
    except KeyError:
        raise TypeError(f"AGT1 cannot store dtype {array.dtype}") from None
    if array.ndim > 255:
        raise ValueError("AGT1 rank limited to 255")
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_CODES[code]).tobytes()
    return header + payload


def decode(buf: bytes | memoryview, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one record starting at ``offset``; returns (array, next offset)."""
    buf = memoryview(buf)
    if bytes(buf[offset:offset + 4]) != MAGIC:
        raise IntegrityError(f"bad AGT1 magic at byte {offset}")
    if len(buf) < offset + 6:
        raise IntegrityError("truncated AGT1 header")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _CODES:
        raise IntegrityError(f"unknown AGT1 dtype code {code}")
    pos = offset + 6
    if len(buf) < pos + 8 * rank:
        raise IntegrityError("truncated AGT1 shape")
    shape = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(buf) < pos + nbytes:
        raise IntegrityError("truncated AGT1 payload")
    array = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(shape)
    return array.astype(dtype.newbyteorder("="), copy=True), pos + nbytes


def write(fp: BinaryIO, array: np.ndarray) -> int:
    blob = encode(array)
    fp.write(blob)
    return len(blob)


def read(fp: BinaryIO) -> np.ndarray:
    array, _ = decode(fp.read())
    return array


def save(path: str | Path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode(array))


def load(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    array, end = decode(data)
    if end != len(data):
        raise IntegrityError(f"{path}: {len(data) - end} trailing bytes after AGT1 record")
    return array
