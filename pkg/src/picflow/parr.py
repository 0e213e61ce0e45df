"""Portable array serialization (PARR1).

Layout: magic b"PARR1", dtype tag b"f64", one uint8 rank byte, rank
little-endian uint64 dims, then the row-major payload of little-endian
8-byte floats. Round-trips are bitwise; writes are atomic
(temp-file-then-rename).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

MAGIC = b"PARR1"
DTYPE_TAG = b"f64"
MAX_RANK = 4


class FormatError(ValueError):
    pass


def write_array(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype="<f8")
    if array.ndim < 1 or array.ndim > MAX_RANK:
        raise FormatError(f"rank {array.ndim} outside supported 1..{MAX_RANK}")
    header = MAGIC + DTYPE_TAG + struct.pack("<B", array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array).tobytes()
    directory = os.path.dirname(os.fspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_array(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        tag = fh.read(len(DTYPE_TAG))
        if tag != DTYPE_TAG:
            raise FormatError(f"{path}: unsupported dtype tag {tag!r}")
        (rank,) = struct.unpack("<B", fh.read(1))
        if rank < 1 or rank > MAX_RANK:
            raise FormatError(f"{path}: rank {rank} outside supported 1..{MAX_RANK}")
        dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank))
        count = int(np.prod(dims))
        payload = fh.read(8 * count)
        if len(payload) != 8 * count:
            raise FormatError(f"{path}: truncated payload")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
