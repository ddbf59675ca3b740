"""MTB1 binary tensor files.

Layout (all integers little-endian)::

    0..3    magic  b"MTB1"
    4       dtype  1 = float32, 2 = float64
    5..7    reserved, must be zero
    8..15   rows   u64
    16..23  cols   u64
    24..    row-major payload, no padding, no trailer

float32 files are widened to float64 on read.
"""
import hashlib
import struct

import numpy as np

from .errors import FormatError, InvalidInput
from .tensor import as_matrix

MAGIC = b"MTB1"
HEADER = struct.Struct("<4sB3sQQ")
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
DTYPE_CODES = {"f32": 1, "f64": 2}


def encode_tensor(m, dtype="f64", allow_empty=False):
    if dtype not in DTYPE_CODES:
        raise InvalidInput(f"unknown dtype {dtype!r}; expected one of {sorted(DTYPE_CODES)}")
    a = as_matrix(m, allow_empty=allow_empty)
    code = DTYPE_CODES[dtype]
    payload = a.astype(DTYPES[code]).tobytes(order="C")
    return HEADER.pack(MAGIC, code, b"\0\0\0", a.shape[0], a.shape[1]) + payload


def decode_tensor(buf, allow_empty=False):
    """Parse one MTB1 blob occupying all of ``buf``."""
    buf = memoryview(buf)
    if len(buf) < HEADER.size:
        raise FormatError(f"truncated header: {len(buf)} of {HEADER.size} bytes", offset=len(buf))
    magic, code, reserved, rows, cols = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {bytes(magic)!r}", offset=0)
    if code not in DTYPES:
        raise FormatError(f"unknown dtype code {code}", offset=4)
    if reserved != b"\0\0\0":
        raise FormatError("reserved header bytes are not zero", offset=5)
    if not allow_empty and (rows == 0 or cols == 0):
        raise FormatError(f"empty tensor {rows}x{cols}", offset=8 if rows == 0 else 16)
    dt = DTYPES[code]
    expected = rows * cols * dt.itemsize
    have = len(buf) - HEADER.size
    if have < expected:
        raise FormatError(f"truncated payload: {have} of {expected} bytes", offset=len(buf))
    if have > expected:
        raise FormatError(f"{have - expected} trailing bytes after payload", offset=HEADER.size + expected)
    data = np.frombuffer(buf, dtype=dt, count=rows * cols, offset=HEADER.size)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise FormatError("non-finite value in payload", offset=HEADER.size + int(bad[0]) * dt.itemsize)
    return data.astype(np.float64).reshape(rows, cols)


def write_tensor(path, m, dtype="f64"):
    blob = encode_tensor(m, dtype)
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
