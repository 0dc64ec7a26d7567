"""Portable tensor file format (shared interchange format, little-endian):

    8-byte magic b"PTNSR01\\0"
    uint32 dtype code (0 = float32)
    uint32 ndim
    uint32 x ndim dims
    row-major IEEE-754 binary32 payload
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PTNSR01\x00"


def write_tensor(path, arr) -> np.ndarray:
    """Write ``arr`` as float32; returns the float32 array actually stored
    so callers can compute expectations from the quantized values."""
    arr = np.ascontiguousarray(arr).astype("<f4") if np.ndim(arr) \
        else np.asarray(arr, dtype="<f4")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", 0, arr.ndim))
        if arr.ndim:
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())
    return arr


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:8] != MAGIC:
        raise ValueError(f"{path}: bad magic")
    dtype_code, ndim = struct.unpack_from("<II", buf, 8)
    if dtype_code != 0:
        raise ValueError(f"{path}: unsupported dtype code {dtype_code}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 16)
    start = 16 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    if start + 4 * count != len(buf):
        raise ValueError(f"{path}: payload size mismatch")
    return np.frombuffer(buf[start:], dtype="<f4").reshape(dims).copy()
