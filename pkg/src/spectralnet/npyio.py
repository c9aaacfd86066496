"""NPY v1.0 files restricted to a few little-endian dtypes.

Header parsing and layout come from ``numpy.lib.format``; this module adds the
accepted-dtype whitelist, rejects Fortran order and other versions, and checks
that the data section has exactly the advertised size.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np
from numpy.lib import format as npformat

MAGIC = npformat.MAGIC_PREFIX
ACCEPTED_DESCR = ("<f4", "<f8", "<i2", "<i4", "<u1", "<u2")
# numpy writes single-byte types with the "not applicable" byte-order mark
_ALIASES = {"|u1": "<u1"}


class NpyFormatError(ValueError):
    pass


def _descr(dtype: np.dtype) -> str:
    return _ALIASES.get(dtype.str, dtype.str)


def parse_header(buf: bytes) -> tuple[str, tuple[int, ...], int]:
    """Return ``(descr, shape, data_offset)`` for an NPY v1.0 byte string."""
    stream = io.BytesIO(buf)
    try:
        version = npformat.read_magic(stream)
    except ValueError as exc:
        raise NpyFormatError(f"missing NPY magic bytes: {exc}") from None
    if version != (1, 0):
        raise NpyFormatError(f"unsupported NPY version {version[0]}.{version[1]}")
    try:
        shape, fortran, dtype = npformat.read_array_header_1_0(stream)
    except (ValueError, TypeError, SyntaxError) as exc:
        raise NpyFormatError(f"malformed NPY header: {exc}") from None
    descr = _descr(dtype)
    if descr not in ACCEPTED_DESCR:
        raise NpyFormatError(f"unsupported dtype descr {dtype.str!r}")
    if fortran:
        raise NpyFormatError("fortran_order arrays are not supported")
    if any(d < 0 for d in shape):
        raise NpyFormatError(f"bad shape {shape!r}")
    return descr, tuple(shape), stream.tell()


def read_npy(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    descr, shape, offset = parse_header(buf)
    dtype = np.dtype(descr)
    count = int(np.prod(shape, dtype=np.int64))
    if len(buf) - offset != count * dtype.itemsize:
        raise NpyFormatError(
            f"data section holds {len(buf) - offset} bytes, expected {count * dtype.itemsize}"
        )
    return np.frombuffer(buf, dtype=dtype, offset=offset, count=count).reshape(shape).copy()


def encode_npy(array: np.ndarray) -> bytes:
    arr = np.asarray(array, order="C")
    descr = "<" + arr.dtype.str[1:]
    if descr not in ACCEPTED_DESCR:
        raise NpyFormatError(f"cannot write dtype {arr.dtype} (accepted: {', '.join(ACCEPTED_DESCR)})")
    buf = io.BytesIO()
    npformat.write_array(buf, arr.astype(np.dtype(descr), copy=False), version=(1, 0), allow_pickle=False)
    return buf.getvalue()


def write_npy(path, array: np.ndarray) -> None:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_npy(array))
    os.replace(tmp, path)
