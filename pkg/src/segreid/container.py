"""STT v1 tensor container.

Layout (all integers little-endian)::

    offset 0   4 bytes   magic  b"STT1" (53 54 54 31)
    offset 4   1 byte    dtype code: 0 = f32, 1 = f64, 2 = u8
    offset 5   1 byte    rank r
    offset 6   8*r bytes dims, u64 each
    then                 row-major payload, little-endian elements
"""

from __future__ import annotations

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .tensor import Tensor

MAGIC = b"STT1"
DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
CODE_OF = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class ContainerError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class FormatError(ContainerError):
    """Bad magic, unknown dtype code or trailing bytes."""


class TruncationError(ContainerError):
    """File ends before the header or payload is complete."""


class DtypeMismatchError(ContainerError):
    """Stored dtype differs from the one the caller asked for."""


class RankMismatchError(ContainerError):
    """Stored rank differs from the one the caller asked for."""


def encode(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    native = array.dtype.newbyteorder("=")
    if native not in CODE_OF:
        raise TypeError(f"STT cannot store dtype {array.dtype}")
    code = CODE_OF[native]
    if array.ndim > 255:
        raise ValueError("rank above 255 is not representable")
    header = MAGIC + struct.pack("<BB", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=DTYPE_CODES[code]).tobytes()
    return header + payload


def decode(buf: bytes, dtype=None, rank: int | None = None) -> np.ndarray:
    if len(buf) < 4:
        raise TruncationError("file shorter than the magic", len(buf))
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}", 0)
    if len(buf) < 6:
        raise TruncationError("header cut before dtype/rank bytes", len(buf))
    code, r = buf[4], buf[5]
    if code not in DTYPE_CODES:
        raise FormatError(f"unknown dtype code {code}", 4)
    stored = DTYPE_CODES[code]
    if dtype is not None and np.dtype(dtype).newbyteorder("<") != stored.newbyteorder("<"):
        raise DtypeMismatchError(f"stored dtype {stored} but {np.dtype(dtype)} was requested", 4)
    if rank is not None and r != rank:
        raise RankMismatchError(f"stored rank {r} but rank {rank} was requested", 5)
    dims_end = 6 + 8 * r
    if len(buf) < dims_end:
        raise TruncationError(f"header cut inside the {r} dims", len(buf))
    dims = struct.unpack_from(f"<{r}Q", buf, 6)
    count = int(np.prod(dims, dtype=np.int64)) if r else 1
    end = dims_end + count * stored.itemsize
    if len(buf) < end:
        raise TruncationError(f"payload needs {end - dims_end} bytes, found {len(buf) - dims_end}", len(buf))
    if len(buf) > end:
        raise FormatError(f"{len(buf) - end} trailing bytes after payload", end)
    arr = np.frombuffer(buf, dtype=stored, count=count, offset=dims_end).reshape(dims)
    return arr.astype(stored.newbyteorder("="), copy=True)


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_tensor(t, path) -> None:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    atomic_write_bytes(path, encode(data))


def load_array(path, dtype=None, rank: int | None = None) -> np.ndarray:
    return decode(Path(path).read_bytes(), dtype=dtype, rank=rank)


def load_tensor(path, dtype=None, rank: int | None = None) -> Tensor:
    """Load a file as a Tensor, preserving the stored dtype bit-exactly."""
    arr = load_array(path, dtype=dtype, rank=rank)
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.requires_grad = False
    t.grad = None
    t._record = None
    t.name = None
    return t
