"""``.inft`` tensor files.

Layout (all little-endian)::

    offset 0   4 bytes   magic b"INFT"
    offset 4   u32       version (1)
    offset 8   u32       ndim (1 or 2)
    offset 12  ndim*u64  dims
    ...        f64 * prod(dims)   row-major payload

Round trips are bit-exact: the payload is the raw IEEE-754 bytes.
"""

import struct

import numpy as np

from infsa.errors import FormatError

MAGIC = b"INFT"
VERSION = 1
_HEAD = struct.Struct("<4sII")


def encode_tensor(arr):
    arr = np.asarray(arr)
    if arr.ndim not in (1, 2):
        raise ValueError(f"only 1-D and 2-D tensors are supported, got ndim={arr.ndim}")
    payload = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return _HEAD.pack(MAGIC, VERSION, arr.ndim) + dims + payload


def decode_tensor(buf):
    buf = bytes(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if len(buf) < _HEAD.size:
        raise FormatError("truncated header", len(buf))
    _, version, ndim = _HEAD.unpack_from(buf, 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if ndim not in (1, 2):
        raise FormatError(f"ndim must be 1 or 2, got {ndim}", 8)
    dims_end = _HEAD.size + 8 * ndim
    if len(buf) < dims_end:
        raise FormatError("truncated dimension table", len(buf))
    dims = struct.unpack_from(f"<{ndim}Q", buf, _HEAD.size)
    count = 1
    for d in dims:
        count *= d
    expected = dims_end + 8 * count
    if len(buf) < expected:
        raise FormatError(
            f"truncated payload: dims {dims} need {8 * count} bytes, found {len(buf) - dims_end}",
            len(buf),
        )
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after payload", expected)
    return np.frombuffer(buf, dtype="<f8", count=count, offset=dims_end).astype(np.float64).reshape(dims)


def store_tensor(path, arr):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(arr))


def load_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())
