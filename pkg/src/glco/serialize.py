"""Binary tensor payloads and named-tensor archives.

TNSR payload layout (all little-endian)::

    b"TNSR" | version:u8 | rank:u8 | extents:u64 * rank | dtype:u8 | scalars

dtype is 4 for float32 and 8 for float64. An archive is::

    b"TNAR" | version:u8 | count:u64 | (name_len:u32 | utf-8 name | TNSR payload) * count
"""

import io
import struct

import numpy as np

from .errors import DataError

TENSOR_MAGIC = b"TNSR"
ARCHIVE_MAGIC = b"TNAR"
VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def write_tensor(stream, array):
    arr = np.asarray(array)
    if arr.dtype not in (np.float32, np.float64):
        raise TypeError(f"only float32/float64 tensors serialize, got {arr.dtype}")
    code = arr.dtype.itemsize
    stream.write(TENSOR_MAGIC)
    stream.write(struct.pack("<BB", VERSION, arr.ndim))
    stream.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    stream.write(struct.pack("<B", code))
    stream.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def _read_exact(stream, n):
    buf = stream.read(n)
    if len(buf) != n:
        raise DataError("truncated tensor stream")
    return buf


def read_tensor(stream):
    if _read_exact(stream, 4) != TENSOR_MAGIC:
        raise DataError("bad tensor magic")
    version, rank = struct.unpack("<BB", _read_exact(stream, 2))
    if version != VERSION:
        raise DataError(f"unsupported tensor version {version}")
    shape = struct.unpack(f"<{rank}Q", _read_exact(stream, 8 * rank))
    (code,) = struct.unpack("<B", _read_exact(stream, 1))
    if code not in _DTYPES:
        raise DataError(f"unknown dtype code {code}")
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    data = np.frombuffer(_read_exact(stream, count * dtype.itemsize), dtype=dtype)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def tensor_to_bytes(array):
    buf = io.BytesIO()
    write_tensor(buf, array)
    return buf.getvalue()


def tensor_from_bytes(blob):
    return read_tensor(io.BytesIO(blob))


def save_archive(path, named):
    """Write an ordered mapping name -> array."""
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<BQ", VERSION, len(named)))
        for name, arr in named.items():
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            write_tensor(fh, arr)


def load_archive(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != ARCHIVE_MAGIC:
            raise DataError(f"{path}: not a tensor archive")
        version, count = struct.unpack("<BQ", _read_exact(fh, 9))
        if version != VERSION:
            raise DataError(f"{path}: unsupported archive version {version}")
        out = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, n).decode("utf-8")
            out[name] = read_tensor(fh)
        return out
