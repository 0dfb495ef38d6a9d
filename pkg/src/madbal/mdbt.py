"""Bit-exact binary tensor container (.mdbt files).

Layout: magic b"MDBT", u8 version (=1), u8 dtype code, u8 ndim, u8 reserved
(=0), then ndim little-endian u32 dimension sizes, then the row-major
little-endian payload.  Supported dtypes: float32 (code 1), uint8 (code 2),
int32 (code 3).  Shapes have 1-4 dimensions, each >= 1.

Writing identical arrays produces byte-identical files; read_tensor is the
exact inverse of write_tensor.  Both are pure with respect to process state
and safe to call concurrently on distinct paths.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"MDBT"
VERSION = 1

DTYPE_F32 = 1
DTYPE_U8 = 2
DTYPE_I32 = 3

_CODE_TO_NP = {
    DTYPE_F32: np.dtype("<f4"),
    DTYPE_U8: np.dtype("u1"),
    DTYPE_I32: np.dtype("<i4"),
}
_NP_TO_CODE = {np.dtype(np.float32): DTYPE_F32,
               np.dtype(np.uint8): DTYPE_U8,
               np.dtype(np.int32): DTYPE_I32}

MAX_NDIM = 4


class MdbtError(Exception):
    """Base error for the tensor container."""


class TensorFormatError(MdbtError):
    """Corrupt or unsupported header (magic, version, dtype, ndim, dims)."""


class TensorLengthError(MdbtError):
    """Payload length does not match the header's element count."""


def _dtype_code(arr: np.ndarray) -> int:
    try:
        return _NP_TO_CODE[arr.dtype]
    except KeyError:
        raise ValueError(
            f"unsupported dtype {arr.dtype}; expected float32, uint8 or int32"
        ) from None


def _check_shape(shape: tuple[int, ...]) -> None:
    if not 1 <= len(shape) <= MAX_NDIM:
        raise ValueError(f"shape must have 1-{MAX_NDIM} dimensions, got {shape}")
    if any(d < 1 for d in shape):
        raise ValueError(f"every dimension must be >= 1, got {shape}")


def write_tensor(path, arr: np.ndarray) -> None:
    """Write ``arr`` to ``path`` in the container format.

    Invariant violations (unsupported dtype, bad shape) are rejected before
    anything is written.
    """
    arr = np.ascontiguousarray(arr)
    code = _dtype_code(arr)
    _check_shape(arr.shape)
    header = MAGIC + bytes((VERSION, code, arr.ndim, 0))
    header += b"".join(struct.pack("<I", d) for d in arr.shape)
    payload = arr.astype(_CODE_TO_NP[code], copy=False).tobytes()
    Path(path).write_bytes(header + payload)


def read_header(path) -> tuple[int, tuple[int, ...]]:
    """Return (dtype code, shape) without loading the payload."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise TensorFormatError(f"{path}: truncated header")
        if head[:4] != MAGIC:
            raise TensorFormatError(f"{path}: bad magic {head[:4]!r}")
        version, code, ndim = head[4], head[5], head[6]
        if version != VERSION:
            raise TensorFormatError(f"{path}: unknown version {version}")
        if code not in _CODE_TO_NP:
            raise TensorFormatError(f"{path}: unknown dtype code {code}")
        if not 1 <= ndim <= MAX_NDIM:
            raise TensorFormatError(f"{path}: bad ndim {ndim}")
        dim_bytes = fh.read(4 * ndim)
        if len(dim_bytes) < 4 * ndim:
            raise TensorFormatError(f"{path}: truncated dimension list")
        shape = struct.unpack(f"<{ndim}I", dim_bytes)
        if any(d < 1 for d in shape):
            raise TensorFormatError(f"{path}: zero-sized dimension in {shape}")
        return code, shape


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by write_tensor; rejects corrupt input."""
    code, shape = read_header(path)
    dtype = _CODE_TO_NP[code]
    data = Path(path).read_bytes()
    offset = 8 + 4 * len(shape)
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(data) - offset != expected:
        raise TensorLengthError(
            f"{path}: header declares {expected} payload bytes, "
            f"found {len(data) - offset}"
        )
    return np.frombuffer(data, dtype=dtype, offset=offset).reshape(shape).copy()
