import struct

import numpy as np
import pytest

from speechmime.checkpoint import (FORMAT_VERSION, MAGIC, load_checkpoint,
                                   save_checkpoint)
from speechmime.errors import CorruptCheckpointError, DataError, VersionError


def arrays_fixture():
    rng = np.random.Generator(np.random.PCG64(0))
    return {
        "conn.w": rng.normal(size=(8, 4)).astype(np.float32),
        "conn.b": rng.normal(size=(8,)).astype(np.float32),
        "adam.t": np.array([125.0], dtype=np.float32),
    }


def test_round_trip_bit_exact(tmp_path):
    path = tmp_path / "state.smck"
    arrays = arrays_fixture()
    save_checkpoint(path, arrays, meta={"kind": "test", "step": 125})
    back, meta = load_checkpoint(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].dtype == np.float32
        assert np.array_equal(back[k], arrays[k])
    assert meta["kind"] == "test"
    assert meta["step"] == 125


def test_magic_checked(tmp_path):
    path = tmp_path / "state.smck"
    save_checkpoint(path, arrays_fixture(), meta={})
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_payload_bit_flip_detected(tmp_path):
    path = tmp_path / "state.smck"
    save_checkpoint(path, arrays_fixture(), meta={})
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0x01
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_header_corruption_detected(tmp_path):
    path = tmp_path / "state.smck"
    save_checkpoint(path, arrays_fixture(), meta={})
    raw = bytearray(path.read_bytes())
    raw[20] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_future_version_refused(tmp_path):
    path = tmp_path / "state.smck"
    save_checkpoint(path, arrays_fixture(), meta={})
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_checkpoint(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "state.smck"
    save_checkpoint(path, arrays_fixture(), meta={})
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptCheckpointError):
        load_checkpoint(path)


def test_empty_arrays_rejected(tmp_path):
    with pytest.raises(DataError):
        save_checkpoint(tmp_path / "x.smck", {}, meta={})


def test_magic_constant():
    assert MAGIC == b"SMCK"
    assert FORMAT_VERSION == 1


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "absent.smck")
