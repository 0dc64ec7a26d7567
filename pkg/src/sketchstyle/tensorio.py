"""Portable tensor files and checkpoint serialization.

Portable tensor format (little-endian throughout):
    8-byte magic b"PTNSR01\\0"
    uint32 dtype code (0 = float32)
    uint32 ndim
    uint32 x ndim dims
    row-major IEEE-754 binary32 payload

Checkpoint file:
    8-byte magic b"SSCKPT1\\0"
    uint32 manifest length, UTF-8 JSON manifest
        {"config": ..., "step": int, "seed": int, "params": [names...]}
    one portable tensor record per manifest entry, in order
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import IoError

MAGIC = b"PTNSR01\x00"
CKPT_MAGIC = b"SSCKPT1\x00"


def tensor_to_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim and not arr.flags.c_contiguous:  # ascontiguousarray promotes 0-d to 1-d
        arr = np.ascontiguousarray(arr)
    head = MAGIC + struct.pack("<II", 0, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
    return head + arr.tobytes()


def tensor_from_bytes(buf: bytes, offset: int = 0):
    """Parse one record; returns (array, next_offset)."""
    if buf[offset:offset + 8] != MAGIC:
        raise IoError("bad magic in portable tensor record")
    dtype_code, ndim = struct.unpack_from("<II", buf, offset + 8)
    if dtype_code != 0:
        raise IoError(f"unsupported dtype code {dtype_code}")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset + 16)
    start = offset + 16 + 4 * ndim
    count = int(np.prod(dims)) if ndim else 1
    end = start + 4 * count
    if end > len(buf):
        raise IoError("truncated portable tensor record")
    arr = np.frombuffer(buf[start:end], dtype="<f4").reshape(dims).copy()
    return arr, end


def save_tensor(arr: np.ndarray, path):
    with open(path, "wb") as f:
        f.write(tensor_to_bytes(arr))


def load_tensor(path) -> np.ndarray:
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise IoError(f"cannot read tensor file {path}: {e}")
    arr, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise IoError(f"trailing bytes in tensor file {path}")
    return arr


def save_checkpoint(path, named_params, config: dict, step: int, seed: int):
    names = [n for n, _ in named_params]
    manifest = json.dumps({"config": config, "step": step, "seed": seed, "params": names})
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        raw = manifest.encode("utf-8")
        f.write(struct.pack("<I", len(raw)))
        f.write(raw)
        for _, p in named_params:
            f.write(tensor_to_bytes(p.data))


def load_checkpoint(path):
    """Returns (manifest dict, {name: ndarray})."""
    try:
        with open(path, "rb") as f:
            buf = f.read()
    except OSError as e:
        raise IoError(f"cannot read checkpoint {path}: {e}")
    if buf[:8] != CKPT_MAGIC:
        raise IoError(f"not a checkpoint file: {path}")
    (mlen,) = struct.unpack_from("<I", buf, 8)
    manifest = json.loads(buf[12:12 + mlen].decode("utf-8"))
    tensors = {}
    offset = 12 + mlen
    for name in manifest["params"]:
        arr, offset = tensor_from_bytes(buf, offset)
        tensors[name] = arr
    if offset != len(buf):
        raise IoError(f"trailing bytes in checkpoint {path}")
    return manifest, tensors


def restore_params(module, tensors: dict):
    for name, p in module.named_parameters():
        if name not in tensors:
            raise IoError(f"checkpoint missing parameter {name}")
        if tensors[name].shape != p.data.shape:
            raise IoError(f"checkpoint shape mismatch for {name}")
        p.data = tensors[name].astype(np.float32)
