"""NSWT binary tensor format.

Layout: magic ``b"NSWT"``, u8 version (1), u8 dtype (0 = f32, 1 = f64),
u8 ndim, ``ndim`` little-endian u64 dims, then row-major little-endian
scalars. Several records may be concatenated in one stream.
"""

from __future__ import annotations

import io
import os
import struct
from typing import BinaryIO, Iterable

import numpy as np

from .errors import ContractError

MAGIC = b"NSWT"
VERSION = 1
_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def write_tensor(fh: BinaryIO, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<")
    if dt not in _CODES:
        raise ContractError(f"NSWT supports float32/float64 only, got {arr.dtype}")
    fh.write(MAGIC)
    fh.write(struct.pack("<BBB", VERSION, _CODES[dt], arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    head = fh.read(7)
    if len(head) < 7 or head[:4] != MAGIC:
        raise ContractError("not an NSWT record (bad magic)")
    version, code, ndim = struct.unpack("<BBB", head[4:])
    if version != VERSION:
        raise ContractError(f"unsupported NSWT version {version}")
    if code not in _DTYPES:
        raise ContractError(f"unknown NSWT dtype code {code}")
    shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
    dt = _DTYPES[code]
    count = int(np.prod(shape)) if shape else 1
    buf = fh.read(count * dt.itemsize)
    if len(buf) != count * dt.itemsize:
        raise ContractError("truncated NSWT payload")
    return np.frombuffer(buf, dtype=dt).reshape(shape).astype(dt.newbyteorder("="))


def save(path: str | os.PathLike, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, arr)


def load(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def save_many(path: str | os.PathLike, arrays: Iterable[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        for a in arrays:
            write_tensor(fh, a)


def load_many(path: str | os.PathLike) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    stream = io.BytesIO(data)
    out = []
    while stream.tell() < len(data):
        out.append(read_tensor(stream))
    return out
