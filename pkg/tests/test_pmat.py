import struct

import numpy as np
import pytest

from pair import pmat


def test_layout_is_column_major_little_endian():
    a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    data = pmat.dumps(a)
    assert data[:6] == b"PMAT1\x00"
    assert struct.unpack("<QQ", data[6:22]) == (2, 3)
    assert struct.unpack("<6d", data[22:]) == (1.0, 4.0, 2.0, 5.0, 3.0, 6.0)


def test_roundtrip_bitwise(tmp_path, rng):
    a = rng.standard_normal((7, 5))
    a[0, 0] = np.nan
    a[1, 1] = -0.0
    pmat.write(tmp_path / "a.pmat", a)
    b = pmat.read(tmp_path / "a.pmat")
    assert a.tobytes() == b.tobytes()


def test_vector_is_a_column():
    assert pmat.loads(pmat.dumps(np.arange(3.0))).shape == (3, 1)


def test_empty_matrix():
    assert pmat.loads(pmat.dumps(np.zeros((0, 4)))).shape == (0, 4)


def test_bad_magic():
    with pytest.raises(pmat.PmatError, match="magic"):
        pmat.loads(b"PMAT2\x00" + bytes(16))


def test_truncated():
    data = pmat.dumps(np.ones((2, 2)))
    with pytest.raises(pmat.PmatError, match="expected 54 bytes, got 50"):
        pmat.loads(data[:-4])


def test_rejects_3d():
    with pytest.raises(pmat.PmatError):
        pmat.dumps(np.zeros((2, 2, 2)))
