"""JHT1 tensor files.

Layout: ``b"JHT1"``, one byte dtype code (0 float32, 1 uint8), one byte
ndim, ndim little-endian uint64 extents, then the row-major little-endian
payload.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"JHT1"
_CODES = {np.dtype(np.float32): 0, np.dtype(np.uint8): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


class JHTFormatError(ValueError):
    pass


def encode(array: np.ndarray) -> bytes:
    arr = np.asarray(array)
    if arr.dtype not in _CODES:
        raise JHTFormatError(f"unsupported dtype {arr.dtype}; JHT1 stores float32 or uint8")
    if arr.ndim > 255:
        raise JHTFormatError("too many dimensions")
    code = _CODES[arr.dtype]
    header = MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def decode(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise JHTFormatError("bad magic")
    code, ndim = struct.unpack_from("<BB", buf, 4)
    if code not in _DTYPES:
        raise JHTFormatError(f"unknown dtype code {code}")
    shape = struct.unpack_from(f"<{ndim}Q", buf, 6)
    offset = 6 + 8 * ndim
    dt = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - offset != count * dt.itemsize:
        raise JHTFormatError(f"payload is {len(buf) - offset} bytes, expected {count * dt.itemsize}")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=offset).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True)


def save(path: str | os.PathLike, array) -> Path:
    from .tensor import Tensor

    if isinstance(array, Tensor):
        array = array.data
    path = Path(path)
    path.write_bytes(encode(array))
    return path


def load(path: str | os.PathLike) -> np.ndarray:
    return decode(Path(path).read_bytes())
