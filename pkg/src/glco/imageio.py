"""Binary PGM (P5) / PPM (P6) reading and writing, 8- or 16-bit."""

import os
import re

import numpy as np

from .errors import DataError

_MAGIC = {b"P5": 1, b"P6": 3}
_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(buf, path):
    pos = 0
    fields = []
    while len(fields) < 4:
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise DataError(f"{path}: truncated PNM header")
        fields.append(m.group(1))
        pos = m.end()
    magic = fields[0]
    if magic not in _MAGIC:
        raise DataError(f"{path}: unsupported magic {magic!r} (need P5 or P6)")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise DataError(f"{path}: malformed PNM header") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise DataError(f"{path}: invalid PNM header values")
    # exactly one whitespace byte separates the header from the raster
    return _MAGIC[magic], width, height, maxval, pos + 1


def read_pnm(path):
    """Return a uint8/uint16 array, (H, W) for PGM and (H, W, 3) for PPM."""
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    channels, width, height, maxval, start = _parse_header(buf, path)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(buf) - start < count * dtype.itemsize:
        raise DataError(f"{path}: raster shorter than header promises")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=start)
    shape = (height, width) if channels == 1 else (height, width, 3)
    return data.reshape(shape).astype(dtype.newbyteorder("="))


def write_pnm(path, array, maxval=255):
    """Write a (H, W) array as P5 or an (H, W, 3) array as P6."""
    a = np.asarray(array)
    if a.ndim == 2:
        magic = b"P5"
    elif a.ndim == 3 and a.shape[2] == 3:
        magic = b"P6"
    else:
        raise DataError(f"cannot write array of shape {a.shape} as PNM")
    if a.min(initial=0) < 0 or a.max(initial=0) > maxval:
        raise DataError(f"pixel values outside [0, {maxval}]")
    dtype = ">u2" if maxval > 255 else "u1"
    header = b"%s\n%d %d\n%d\n" % (magic, a.shape[1], a.shape[0], maxval)
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    try:
        with open(path, "wb") as fh:
            fh.write(header + a.astype(dtype).tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def quantize(prob):
    """Map probabilities in [0, 1] to 0..255, rounding halves away from zero."""
    p = np.clip(np.asarray(prob, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(p + 0.5).astype(np.uint8)
