import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from madbal import mdbt


def test_exact_bytes_f32_vector(tmp_path):
    # frozen example: float32 [1.0, 2.0], shape (2,) -> 20 bytes total
    p = tmp_path / "t.mdbt"
    mdbt.write_tensor(p, np.array([1.0, 2.0], dtype=np.float32))
    raw = p.read_bytes()
    assert len(raw) == 20
    assert raw[:4] == b"MDBT"
    assert raw[4] == 1  # version
    assert raw[5] == mdbt.DTYPE_F32
    assert raw[6] == 1  # ndim
    assert raw[7] == 0  # reserved
    assert struct.unpack("<I", raw[8:12]) == (2,)
    assert raw[12:] == struct.pack("<2f", 1.0, 2.0)


def test_round_trip_u8_matrix(tmp_path):
    p = tmp_path / "m.mdbt"
    arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
    mdbt.write_tensor(p, arr)
    back = mdbt.read_tensor(p)
    assert back.dtype == np.uint8
    np.testing.assert_array_equal(back, arr)


_shapes = st.lists(st.integers(1, 5), min_size=1, max_size=4).map(tuple)


@settings(max_examples=60, deadline=None)
@given(shape=_shapes, code=st.sampled_from([1, 2, 3]), seed=st.integers(0, 2**32 - 1))
def test_round_trip_property(tmp_path_factory, shape, code, seed):
    rng = np.random.default_rng(seed)
    if code == mdbt.DTYPE_F32:
        arr = rng.standard_normal(shape).astype(np.float32)
    elif code == mdbt.DTYPE_U8:
        arr = rng.integers(0, 256, size=shape, dtype=np.uint8)
    else:
        arr = rng.integers(-(2**31), 2**31 - 1, size=shape, dtype=np.int32)
    p = tmp_path_factory.mktemp("mdbt") / "x.mdbt"
    mdbt.write_tensor(p, arr)
    back = mdbt.read_tensor(p)
    assert back.dtype == arr.dtype
    assert back.shape == arr.shape
    # bitwise identity, so NaN-safe comparison on the raw bytes
    assert back.tobytes() == np.ascontiguousarray(arr).tobytes()
    # writing again produces the identical file
    p2 = tmp_path_factory.mktemp("mdbt") / "y.mdbt"
    mdbt.write_tensor(p2, back)
    assert p2.read_bytes() == p.read_bytes()


def test_header_only_read(tmp_path):
    p = tmp_path / "h.mdbt"
    mdbt.write_tensor(p, np.zeros((2, 3, 4), dtype=np.int32))
    code, shape = mdbt.read_header(p)
    assert code == mdbt.DTYPE_I32
    assert shape == (2, 3, 4)


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.mdbt"
    p.write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(mdbt.TensorFormatError):
        mdbt.read_tensor(p)


def test_rejects_truncated_header(tmp_path):
    p = tmp_path / "short.mdbt"
    p.write_bytes(b"MDBT\x01")
    with pytest.raises(mdbt.TensorFormatError):
        mdbt.read_tensor(p)


def test_rejects_bad_dtype_code(tmp_path):
    p = tmp_path / "dt.mdbt"
    p.write_bytes(b"MDBT" + bytes((1, 9, 1, 0)) + struct.pack("<I", 1) + b"\x00")
    with pytest.raises(mdbt.TensorFormatError):
        mdbt.read_tensor(p)


def test_rejects_bad_ndim(tmp_path):
    p = tmp_path / "nd.mdbt"
    p.write_bytes(b"MDBT" + bytes((1, 1, 5, 0)))
    with pytest.raises(mdbt.TensorFormatError):
        mdbt.read_tensor(p)


def test_rejects_payload_length_mismatch(tmp_path):
    p = tmp_path / "len.mdbt"
    # header says 3 float32 elements (12 bytes) but only 8 bytes follow
    p.write_bytes(b"MDBT" + bytes((1, 1, 1, 0)) + struct.pack("<I", 3) + bytes(8))
    with pytest.raises(mdbt.TensorLengthError):
        mdbt.read_tensor(p)


def test_rejects_zero_dim_on_write(tmp_path):
    with pytest.raises(ValueError):
        mdbt.write_tensor(tmp_path / "z.mdbt", np.zeros((0,), dtype=np.float32))


def test_rejects_unsupported_dtype_before_write(tmp_path):
    p = tmp_path / "f64.mdbt"
    with pytest.raises(ValueError):
        mdbt.write_tensor(p, np.zeros(3, dtype=np.float64))
    assert not p.exists()


def test_rejects_5d_on_write(tmp_path):
    with pytest.raises(ValueError):
        mdbt.write_tensor(tmp_path / "5d.mdbt", np.zeros((1, 1, 1, 1, 1), dtype=np.uint8))
