"""Binary checkpoint archive: byte format, integrity, and round trips."""

import hashlib
import json
import struct

import numpy as np
import pytest

from relight_aug import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from relight_aug.checkpoint import FORMAT_VERSION, MAGIC


def sample_tensors(rng):
    return {
        "weight": rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
        "bias": rng.standard_normal(4).astype(np.float32),
        "scalar": np.array([2.5], dtype=np.float32),
    }


def write_reference_archive(path, kind, config, train_steps, tensors, extra):
    """Independent writer following the documented byte layout."""
    meta = json.dumps(
        {"kind": kind, "config": config, "train_steps": train_steps, "extra": extra},
        sort_keys=True,
    ).encode("utf-8")
    out = bytearray()
    out += b"RLCK"
    out += struct.pack("<I", 1)
    out += struct.pack("<I", len(meta))
    out += meta
    out += struct.pack("<I", len(tensors))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<BB", 0, arr.ndim)
        for dim in arr.shape:
            out += struct.pack("<I", dim)
        out += arr.tobytes(order="C")
    out += hashlib.sha256(bytes(out)).digest()
    path.write_bytes(bytes(out))


def read_reference_archive(raw):
    """Independent parser for the documented byte layout."""
    assert raw[:4] == b"RLCK"
    payload, digest = raw[:-32], raw[-32:]
    assert hashlib.sha256(payload).digest() == digest
    (version,) = struct.unpack_from("<I", payload, 4)
    assert version == 1
    (meta_len,) = struct.unpack_from("<I", payload, 8)
    meta = json.loads(payload[12 : 12 + meta_len].decode("utf-8"))
    offset = 12 + meta_len
    (count,) = struct.unpack_from("<I", payload, offset)
    offset += 4
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", payload, offset)
        offset += 2
        name = payload[offset : offset + name_len].decode("utf-8")
        offset += name_len
        dtype_code, ndim = struct.unpack_from("<BB", payload, offset)
        assert dtype_code == 0
        offset += 2
        dims = struct.unpack_from(f"<{ndim}I", payload, offset)
        offset += 4 * ndim
        size = 4
        for d in dims:
            size *= d
        tensors[name] = np.frombuffer(
            payload[offset : offset + size], dtype="<f4"
        ).reshape(dims)
        offset += size
    assert offset == len(payload)
    return meta, tensors


class TestRoundTrip:
    def test_bit_exact(self, tmp_path, rng):
        tensors = sample_tensors(rng)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, "test-kind", {"a": 1}, 42, tensors, extra={"note": "x"})
        data = load_checkpoint(path)
        assert data.kind == "test-kind"
        assert data.config == {"a": 1}
        assert data.train_steps == 42
        assert data.extra == {"note": "x"}
        assert data.format_version == FORMAT_VERSION
        assert sorted(data.tensors) == sorted(tensors)
        for name, arr in tensors.items():
            assert data.tensors[name].dtype == np.float32
            assert data.tensors[name].tobytes() == np.asarray(arr, np.float32).tobytes()

    def test_save_twice_identical_bytes(self, tmp_path, rng):
        tensors = sample_tensors(rng)
        a = save_checkpoint(tmp_path / "a.ckpt", "k", {}, 0, tensors)
        b = save_checkpoint(tmp_path / "b.ckpt", "k", {}, 0, tensors)
        assert a.read_bytes() == b.read_bytes()

    def test_float64_input_downcast(self, tmp_path):
        arr = np.array([0.1, 0.2, 0.3])
        save_checkpoint(tmp_path / "c.ckpt", "k", {}, 0, {"t": arr})
        loaded = load_checkpoint(tmp_path / "c.ckpt").tensors["t"]
        assert np.array_equal(loaded, arr.astype(np.float32))

    def test_zero_dim_stored_as_length_one(self, tmp_path):
        # contiguity coercion promotes 0-d arrays to shape (1,)
        save_checkpoint(tmp_path / "s.ckpt", "k", {}, 0, {"t": np.float32(1.5).reshape(())})
        loaded = load_checkpoint(tmp_path / "s.ckpt").tensors["t"]
        assert loaded.shape == (1,)
        assert loaded[0] == np.float32(1.5)

    def test_non_contiguous_tensor(self, tmp_path, rng):
        arr = rng.standard_normal((6, 6)).astype(np.float32)[::2, ::2]
        assert not arr.flags["C_CONTIGUOUS"]
        save_checkpoint(tmp_path / "d.ckpt", "k", {}, 0, {"t": arr})
        assert np.array_equal(load_checkpoint(tmp_path / "d.ckpt").tensors["t"], arr)

    def test_overwrite_leaves_valid_file(self, tmp_path, rng):
        path = tmp_path / "e.ckpt"
        save_checkpoint(path, "k", {}, 0, {"t": np.zeros(3, np.float32)})
        save_checkpoint(path, "k", {}, 1, {"t": np.ones(3, np.float32)})
        assert load_checkpoint(path).train_steps == 1
        assert not path.with_suffix(".ckpt.tmp").exists()


class TestFormatOracle:
    def test_loads_independently_written_archive(self, tmp_path, rng):
        tensors = sample_tensors(rng)
        path = tmp_path / "ref.ckpt"
        write_reference_archive(path, "ref-kind", {"n": 2}, 7, tensors, {"e": [1, 2]})
        data = load_checkpoint(path)
        assert data.kind == "ref-kind"
        assert data.config == {"n": 2}
        assert data.train_steps == 7
        assert data.extra == {"e": [1, 2]}
        for name, arr in tensors.items():
            assert np.array_equal(data.tensors[name], np.asarray(arr, np.float32))

    def test_written_archive_parses_independently(self, tmp_path, rng):
        tensors = sample_tensors(rng)
        path = save_checkpoint(tmp_path / "w.ckpt", "kind", {"k": True}, 3, tensors)
        meta, parsed = read_reference_archive(path.read_bytes())
        assert meta["kind"] == "kind"
        assert meta["config"] == {"k": True}
        assert meta["train_steps"] == 3
        for name, arr in tensors.items():
            assert np.array_equal(parsed[name], np.asarray(arr, np.float32))

    def test_identical_bytes_both_writers(self, tmp_path, rng):
        tensors = sample_tensors(rng)
        ours = save_checkpoint(tmp_path / "x.ckpt", "k", {"a": 1}, 5, tensors, {"b": 2})
        ref = tmp_path / "y.ckpt"
        write_reference_archive(ref, "k", {"a": 1}, 5, tensors, {"b": 2})
        assert ours.read_bytes() == ref.read_bytes()


class TestErrorPaths:
    def fresh(self, tmp_path, rng):
        path = tmp_path / "v.ckpt"
        save_checkpoint(path, "k", {}, 0, sample_tensors(rng))
        return path

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_too_short(self, tmp_path):
        path = tmp_path / "short.ckpt"
        path.write_bytes(b"RL")
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_flipped_byte_fails_integrity(self, tmp_path, rng):
        path = self.fresh(tmp_path, rng)
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="integrity"):
            load_checkpoint(path)

    def test_truncation_fails(self, tmp_path, rng):
        path = self.fresh(tmp_path, rng)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_version_mismatch(self, tmp_path, rng):
        path = self.fresh(tmp_path, rng)
        raw = path.read_bytes()
        payload = bytearray(raw[:-32])
        payload[4:8] = struct.pack("<I", FORMAT_VERSION + 1)
        payload = bytes(payload)
        path.write_bytes(payload + hashlib.sha256(payload).digest())
        with pytest.raises(CheckpointError, match="format version"):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path, rng):
        path = self.fresh(tmp_path, rng)
        payload = path.read_bytes()[:-32] + b"\x00\x00\x00\x00"
        path.write_bytes(payload + hashlib.sha256(payload).digest())
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_unknown_dtype_code(self, tmp_path):
        meta = json.dumps(
            {"kind": "k", "config": {}, "train_steps": 0, "extra": {}}, sort_keys=True
        ).encode()
        payload = bytearray()
        payload += MAGIC
        payload += struct.pack("<I", FORMAT_VERSION)
        payload += struct.pack("<I", len(meta))
        payload += meta
        payload += struct.pack("<I", 1)
        payload += struct.pack("<H", 1) + b"t"
        payload += struct.pack("<BB", 9, 1)
        payload += struct.pack("<I", 1)
        payload += b"\x00\x00\x00\x00"
        payload = bytes(payload)
        path = tmp_path / "dtype.ckpt"
        path.write_bytes(payload + hashlib.sha256(payload).digest())
        with pytest.raises(CheckpointError, match="dtype"):
            load_checkpoint(path)
