"""Bit-exact tensor file format."""

import struct

import numpy as np
import pytest

from vcut.errors import FormatError
from vcut.tensorops import Rng
from vcut.vten import read_vten, write_vten


def test_round_trip_f32(tmp_path):
    x = Rng(1).uniform(-5, 5, (2, 3, 4), np.float32)
    write_vten(tmp_path / "x.vten", x)
    back = read_vten(tmp_path / "x.vten")
    assert back.dtype == np.float32 and back.shape == (2, 3, 4)
    assert back.tobytes() == x.tobytes()


def test_round_trip_f64(tmp_path):
    x = Rng(2).uniform(-5, 5, (7,), np.float64)
    write_vten(tmp_path / "x.vten", x)
    assert read_vten(tmp_path / "x.vten").tobytes() == x.tobytes()


def test_header_layout(tmp_path):
    x = np.arange(6, dtype=np.float32).reshape(2, 3) + 1
    path = tmp_path / "x.vten"
    write_vten(path, x)
    raw = path.read_bytes()
    assert raw[:4] == bytes([0x56, 0x54, 0x45, 0x4E])
    version, dtype_code, rank, reserved = struct.unpack("<BBBB", raw[4:8])
    assert (version, dtype_code, rank, reserved) == (1, 0, 2, 0)
    assert struct.unpack("<2Q", raw[8:24]) == (2, 3)
    assert raw[24:] == x.astype("<f4").tobytes()


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "bad.vten"
    p.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError):
        read_vten(p)


def test_rejects_bad_version_and_reserved(tmp_path):
    good = tmp_path / "good.vten"
    write_vten(good, np.ones((2,), np.float32))
    raw = bytearray(good.read_bytes())
    for offset, value in ((4, 9), (7, 1)):
        bad = bytearray(raw)
        bad[offset] = value
        p = tmp_path / f"bad{offset}.vten"
        p.write_bytes(bytes(bad))
        with pytest.raises(FormatError):
            read_vten(p)


def test_rejects_payload_size_mismatch(tmp_path):
    good = tmp_path / "good.vten"
    write_vten(good, np.ones((4,), np.float32))
    p = tmp_path / "short.vten"
    p.write_bytes(good.read_bytes()[:-4])
    with pytest.raises(FormatError):
        read_vten(p)


def test_rejects_integer_arrays(tmp_path):
    with pytest.raises(FormatError):
        write_vten(tmp_path / "x.vten", np.arange(4))
