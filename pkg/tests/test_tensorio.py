import hashlib
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from moft.errors import FormatError, InvalidInput
from moft.tensorio import decode_tensor, encode_tensor, file_sha256, read_tensor, write_tensor


def test_header_layout_by_hand():
    m = np.array([[1.0, 2.0, 3.0]])
    blob = encode_tensor(m)
    expected = b"MTB1" + bytes([2, 0, 0, 0]) + struct.pack("<QQ", 1, 3) + struct.pack("<3d", 1, 2, 3)
    assert blob == expected


def test_f32_is_widened_on_read():
    m = np.array([[0.1, -2.5]])
    blob = encode_tensor(m, "f32")
    assert blob[4] == 1 and len(blob) == 24 + 8
    out = decode_tensor(blob)
    assert out.dtype == np.float64
    assert np.array_equal(out, m.astype(np.float32).astype(np.float64))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(allow_nan=False, allow_infinity=False)))
def test_f64_roundtrip_is_bitwise(m):
    out = decode_tensor(encode_tensor(m))
    assert out.tobytes() == np.ascontiguousarray(m).tobytes()


def test_unknown_dtype_string():
    with pytest.raises(InvalidInput):
        encode_tensor(np.ones((1, 1)), "f16")


def _blob():
    return bytearray(encode_tensor(np.arange(6.0).reshape(2, 3)))


@pytest.mark.parametrize("mutate,offset", [
    (lambda b: b.__setitem__(0, ord("X")), 0),
    (lambda b: b.__setitem__(4, 9), 4),
    (lambda b: b.__setitem__(6, 1), 5),
    (lambda b: b.extend(b"\0"), 24 + 48),
    (lambda b: b.__setitem__(slice(24, 32), struct.pack("<d", float("nan"))), 24),
    (lambda b: b.__setitem__(slice(40, 48), struct.pack("<d", float("inf"))), 40),
])
def test_corruption_reports_offset(mutate, offset):
    b = _blob()
    mutate(b)
    with pytest.raises(FormatError) as err:
        decode_tensor(bytes(b))
    assert err.value.offset == offset
    assert f"offset {offset}" in str(err.value)


def test_truncation():
    b = bytes(_blob())
    with pytest.raises(FormatError):
        decode_tensor(b[:10])
    with pytest.raises(FormatError):
        decode_tensor(b[:-1])


def test_empty_tensor_only_when_allowed():
    blob = encode_tensor(np.zeros((1, 0)), allow_empty=True)
    with pytest.raises(FormatError):
        decode_tensor(blob)
    assert decode_tensor(blob, allow_empty=True).shape == (1, 0)


def test_file_roundtrip_and_hash(tmp_path):
    m = np.random.default_rng(0).standard_normal((3, 4))
    path = tmp_path / "w.mtb"
    digest = write_tensor(path, m)
    assert digest == file_sha256(path) == hashlib.sha256(path.read_bytes()).hexdigest()
    assert np.array_equal(read_tensor(path), m)
