"""PMAT dense matrix files.

Layout::

    b"PMAT1\\0"                      6 bytes magic
    rows  : uint64 little-endian
    cols  : uint64 little-endian
    data  : rows*cols float64 little-endian, column-major
"""

import struct

import numpy as np

MAGIC = b"PMAT1\x00"
_HEADER = struct.Struct("<QQ")


class PmatError(ValueError):
    pass


def dumps(a) -> bytes:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise PmatError(f"PMAT stores 2-D matrices, got shape {a.shape}")
    body = np.asfortranarray(a).astype("<f8", copy=False).tobytes(order="F")
    return MAGIC + _HEADER.pack(a.shape[0], a.shape[1]) + body


def loads(data: bytes) -> np.ndarray:
    head = len(MAGIC) + _HEADER.size
    if len(data) < head or data[: len(MAGIC)] != MAGIC:
        raise PmatError("not a PMAT file (bad magic)")
    rows, cols = _HEADER.unpack_from(data, len(MAGIC))
    expected = head + 8 * rows * cols
    if len(data) != expected:
        raise PmatError(f"PMAT payload size mismatch: expected {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=head, count=rows * cols)
    return np.ascontiguousarray(flat.reshape((rows, cols), order="F"), dtype=np.float64)


def write(path, a):
    with open(path, "wb") as f:
        f.write(dumps(a))


def read(path) -> np.ndarray:
    with open(path, "rb") as f:
        return loads(f.read())
