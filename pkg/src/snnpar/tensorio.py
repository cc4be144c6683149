"""Little-endian binary containers for tensors and checkpoints.

Tensor file (``SNTF1\\0``)::

    magic | rank:u64 | dims:u64 * rank | payload:f32 * prod(dims)

Checkpoint (``SNPK1\\0``) is the magic followed by records until EOF::

    name_len:u64 | name:utf-8 | rank:u64 | dims:u64 * rank | payload:f32
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path
from typing import BinaryIO, Mapping

import numpy as np

TENSOR_MAGIC = b"SNTF1\0"
CHECKPOINT_MAGIC = b"SNPK1\0"

_U64 = struct.Struct("<Q")


class FormatError(ValueError):
    """Malformed or truncated binary file."""


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def read_u64(f: BinaryIO) -> int:
    return _U64.unpack(_read_exact(f, 8))[0]


def write_u64(f: BinaryIO, value: int) -> None:
    f.write(_U64.pack(int(value)))


def write_array(f: BinaryIO, arr: np.ndarray) -> None:
    """Rank, dims and float32 payload (no magic)."""
    arr = np.asarray(arr)
    write_u64(f, arr.ndim)
    for d in arr.shape:
        write_u64(f, d)
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_array(f: BinaryIO) -> np.ndarray:
    rank = read_u64(f)
    if rank > 32:
        raise FormatError(f"implausible tensor rank {rank}")
    shape = tuple(read_u64(f) for _ in range(rank))
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4")
    return data.reshape(shape).astype(np.float32)


def _check_magic(f: BinaryIO, magic: bytes, path) -> None:
    got = f.read(len(magic))
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")


def write_tensor(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(TENSOR_MAGIC)
        write_array(f, arr)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        _check_magic(f, TENSOR_MAGIC, path)
        arr = read_array(f)
        if f.read(1):
            raise FormatError(f"{path}: trailing bytes after tensor payload")
    return arr


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, np.ndarray]) -> None:
    """Write named tensors; the file is replaced atomically."""
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        for name, arr in tensors.items():
            raw = name.encode("utf-8")
            write_u64(f, len(raw))
            f.write(raw)
            write_array(f, arr)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        blob = f.read()
    f = io.BytesIO(blob)
    _check_magic(f, CHECKPOINT_MAGIC, path)
    out: dict[str, np.ndarray] = {}
    while f.tell() < len(blob):
        n = read_u64(f)
        name = _read_exact(f, n).decode("utf-8")
        out[name] = read_array(f)
    return out
