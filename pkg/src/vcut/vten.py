"""VTEN tensor files: a tiny bit-exact container for float arrays.

Layout, all little-endian:
    magic   4 bytes  ``VTEN`` (56 54 45 4E)
    version u8       1
    dtype   u8       0 = float32, 1 = float64
    rank    u8
    reserved u8      0
    extents rank * u64
    payload row-major scalars
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError

MAGIC = b"VTEN"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_vten(path, array) -> None:
    array = np.ascontiguousarray(array)
    if array.dtype not in _DTYPE_CODES:
        raise FormatError(f"VTEN stores float32/float64 only, got {array.dtype}")
    if array.ndim < 1 or min(array.shape) < 1:
        raise ShapeError(f"VTEN requires rank >= 1 and extents >= 1, got shape {array.shape}")
    header = MAGIC + struct.pack(
        "<BBBB", VERSION, _DTYPE_CODES[array.dtype], array.ndim, 0
    )
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    little = array.astype(array.dtype.newbyteorder("<"), copy=False)
    Path(path).write_bytes(header + little.tobytes(order="C"))


def read_vten(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a VTEN file")
    version, dtype_code, rank, reserved = struct.unpack("<BBBB", raw[4:8])
    if version != VERSION:
        raise FormatError(f"{path}: unsupported VTEN version {version}")
    if dtype_code not in _CODE_DTYPES:
        raise FormatError(f"{path}: unknown dtype code {dtype_code}")
    if rank < 1:
        raise FormatError(f"{path}: rank must be >= 1, got {rank}")
    if reserved != 0:
        raise FormatError(f"{path}: reserved byte must be 0, got {reserved}")
    header_end = 8 + 8 * rank
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated extent table")
    extents = struct.unpack(f"<{rank}Q", raw[8:header_end])
    if any(e < 1 for e in extents):
        raise FormatError(f"{path}: extents must be >= 1, got {extents}")
    dtype = _CODE_DTYPES[dtype_code]
    count = 1
    for e in extents:
        count *= e
    payload = raw[header_end:]
    if len(payload) != count * dtype.itemsize:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, extents {extents} require {count * dtype.itemsize}"
        )
    data = np.frombuffer(payload, dtype=dtype).reshape(extents)
    return np.ascontiguousarray(data.astype(dtype.newbyteorder("="), copy=False))
