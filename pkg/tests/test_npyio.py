import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spectralnet.npyio import ACCEPTED_DESCR, NpyFormatError, encode_npy, parse_header, read_npy, write_npy


@settings(max_examples=40, deadline=None)
@given(
    descr=st.sampled_from(ACCEPTED_DESCR),
    shape=st.lists(st.integers(0, 5), min_size=0, max_size=3).map(tuple),
    seed=st.integers(0, 1000),
)
def test_roundtrip_and_numpy_interop(tmp_path_factory, descr, shape, seed):
    d = tmp_path_factory.mktemp("npy")
    arr = (np.random.default_rng(seed).normal(size=shape) * 50).astype(descr)
    write_npy(d / "a.npy", arr)
    back = np.load(d / "a.npy")
    assert back.dtype == arr.dtype and back.shape == arr.shape
    np.testing.assert_array_equal(back, arr)
    np.save(d / "b.npy", arr)
    mine = read_npy(d / "b.npy")
    assert mine.dtype == arr.dtype
    np.testing.assert_array_equal(mine, arr)


def test_header_is_64_byte_aligned():
    buf = encode_npy(np.zeros((3, 4)))
    assert buf[6:8] == b"\x01\x00"
    (hlen,) = struct.unpack("<H", buf[8:10])
    assert (10 + hlen) % 64 == 0
    assert parse_header(buf) == ("<f8", (3, 4), 10 + hlen)


def _with_header(text: str, payload: bytes = b"") -> bytes:
    return b"\x93NUMPY\x01\x00" + struct.pack("<H", len(text)) + text.encode() + payload


@pytest.mark.parametrize(
    "buf",
    [
        b"NOTNUMPY" + b"\x00" * 10,
        _with_header("{'descr': '<f8', 'shape': (2,), }"),
        _with_header("{'descr': '<f8', 'fortran_order': True, 'shape': (2,), }"),
        _with_header("{'descr': '>f8', 'fortran_order': False, 'shape': (2,), }"),
        _with_header("{'descr': '<c16', 'fortran_order': False, 'shape': (2,), }"),
        _with_header("{'descr': '<f8', 'fortran_order': False, 'shape': (-1,), }"),
        _with_header("not a dict at all"),
        b"\x93NUMPY\x02\x00" + b"\x00" * 10,
        b"\x93NUMPY\x01\x00\xff\x00{",
    ],
)
def test_malformed_headers(buf):
    with pytest.raises(NpyFormatError):
        parse_header(buf)


def test_truncated_data(tmp_path):
    buf = encode_npy(np.arange(10, dtype="<i4"))
    (tmp_path / "t.npy").write_bytes(buf[:-4])
    with pytest.raises(NpyFormatError):
        read_npy(tmp_path / "t.npy")


def test_fortran_file_from_numpy_rejected(tmp_path):
    np.save(tmp_path / "f.npy", np.asfortranarray(np.ones((3, 2))))
    with pytest.raises(NpyFormatError):
        read_npy(tmp_path / "f.npy")


def test_unsupported_dtype_on_write():
    with pytest.raises(NpyFormatError):
        encode_npy(np.zeros(2, dtype=np.complex128))
