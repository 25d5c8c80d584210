"""Wire formats: IDX parsing errors, checkpoint round trips, kind tags."""

import struct

import numpy as np
import numpy.testing as npt
import pytest

from mixerlab import fileio
from mixerlab.errors import (
    CheckpointBadMagicError,
    CheckpointCorruptError,
    CheckpointKindError,
    CheckpointVersionError,
    IdxBadMagicError,
    IdxCountMismatchError,
    IdxTruncatedError,
)
from mixerlab.masking import DepthHeads
from mixerlab.mixer import MixerModel
from mixerlab.targets import build_target


def write_pair(tmp_path, images, labels):
    ip = tmp_path / "images.idx"
    lp = tmp_path / "labels.idx"
    fileio.write_idx_images(ip, images)
    fileio.write_idx_labels(lp, labels)
    return str(ip), str(lp)


class TestIdx:
    def test_hand_built_pair_parses(self, tmp_path):
        images = np.arange(32, dtype=np.uint8).reshape(2, 4, 4)
        labels = np.array([3, 7], dtype=np.uint8)
        x, y = fileio.load_idx(*write_pair(tmp_path, images, labels))
        assert x.shape == (2, 1, 4, 4) and x.dtype == np.float32
        npt.assert_array_equal(y, [3, 7])
        npt.assert_allclose(x[0, 0, 0, 1], 1.0 / 255.0)

    def test_pixel_255_maps_to_one(self, tmp_path):
        images = np.full((1, 2, 2), 255, dtype=np.uint8)
        x, _ = write_and_load(tmp_path, images, np.array([0], dtype=np.uint8))
        assert (x == 1.0).all()

    def test_wrong_magic_names_offset(self, tmp_path):
        path = tmp_path / "bad.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000802, 1, 2, 2) + b"\x00" * 4)
        with pytest.raises(IdxBadMagicError, match="offset 0"):
            fileio.load_idx(str(path), str(path))

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.idx"
        path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 4, 4) + b"\x00" * 10)
        labels = tmp_path / "labels.idx"
        fileio.write_idx_labels(labels, np.zeros(2, dtype=np.uint8))
        with pytest.raises(IdxTruncatedError):
            fileio.load_idx(str(path), str(labels))

    def test_count_mismatch(self, tmp_path):
        images = np.zeros((3, 2, 2), dtype=np.uint8)
        ip, _ = write_pair(tmp_path, images, np.zeros(3, dtype=np.uint8))
        lp = tmp_path / "two.idx"
        fileio.write_idx_labels(lp, np.zeros(2, dtype=np.uint8))
        with pytest.raises(IdxCountMismatchError):
            fileio.load_idx(ip, str(lp))


def write_and_load(tmp_path, images, labels):
    return fileio.load_idx(*write_pair(tmp_path, images, labels))


class TestCheckpointContainer:
    def test_round_trip_bit_exact(self, tmp_path, rng):
        tensors = {
            "a.w": rng.standard_normal((3, 4)).astype(np.float32),
            "b": rng.standard_normal(7).astype(np.float32),
        }
        path = tmp_path / "t.mxck"
        fileio.save_tensors(path, "stub", "k = v", tensors)
        kind, cfg, loaded = fileio.load_tensors(path)
        assert kind == "stub" and cfg == "k = v"
        for key in tensors:
            npt.assert_array_equal(loaded[key], tensors[key])

    def test_save_load_save_byte_identical(self, tmp_path, rng):
        tensors = {"w": rng.standard_normal((5, 2)).astype(np.float32)}
        p1, p2 = tmp_path / "a.mxck", tmp_path / "b.mxck"
        fileio.save_tensors(p1, "stub", "cfg", tensors)
        kind, cfg, loaded = fileio.load_tensors(p1)
        fileio.save_tensors(p2, kind, cfg, loaded)
        assert p1.read_bytes() == p2.read_bytes()

    def test_truncated_file(self, tmp_path, rng):
        path = tmp_path / "t.mxck"
        fileio.save_tensors(path, "stub", "", {"w": np.ones(8, np.float32)})
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(CheckpointCorruptError):
            fileio.load_tensors(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "t.mxck"
        fileio.save_tensors(path, "stub", "", {"w": np.ones(2, np.float32)})
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(CheckpointCorruptError):
            fileio.load_tensors(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.mxck"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(CheckpointBadMagicError):
            fileio.load_tensors(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "t.mxck"
        fileio.save_tensors(path, "stub", "", {})
        raw = bytearray(path.read_bytes())
        raw[4:8] = struct.pack("<I", 99)
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError):
            fileio.load_tensors(path)

    def test_kind_mismatch(self, tmp_path):
        path = tmp_path / "t.mxck"
        fileio.save_tensors(path, "cnn", "", {})
        with pytest.raises(CheckpointKindError):
            fileio.load_tensors(path, expect_kind="mixer")


class TestModelPersistence:
    def test_mixer_round_trip(self, tmp_path, tiny_cfg):
        model = MixerModel(tiny_cfg, seed=3)
        path = tmp_path / "m.mxck"
        fileio.save_model(path, model)
        loaded = fileio.load_model(path)
        assert isinstance(loaded, MixerModel) and loaded.cfg == tiny_cfg
        for key, value in model.params().items():
            npt.assert_array_equal(loaded.params()[key], value)

    @pytest.mark.parametrize("kind", ["cnn", "mlp", "mixer-alt"])
    def test_target_round_trip(self, tmp_path, kind, rng):
        model = build_target(kind, seed=5)
        path = tmp_path / "t.mxck"
        fileio.save_model(path, model)
        loaded = fileio.load_model(path)
        assert loaded.kind == kind
        x = rng.uniform(size=(2, 1, 28, 28)).astype(np.float32)
        npt.assert_array_equal(loaded.forward(x), model.forward(x))

    def test_loading_cnn_as_mixer_fails(self, tmp_path):
        model = build_target("cnn", seed=0)
        path = tmp_path / "c.mxck"
        fileio.save_model(path, model)
        with pytest.raises(CheckpointKindError):
            fileio.load_tensors(path, expect_kind="mixer")

    def test_heads_round_trip(self, tmp_path):
        heads = DepthHeads(8, 4, 3, seed=2)
        path = tmp_path / "h.mxck"
        fileio.save_heads(path, heads, 8, 4)
        loaded = fileio.load_heads(path)
        for key, value in heads.params().items():
            npt.assert_array_equal(loaded.params()[key], value)

    def test_advset_round_trip(self, tmp_path, rng):
        x = rng.uniform(size=(4, 1, 8, 8)).astype(np.float32)
        y = np.array([1, 2, 3, 0])
        idx = np.array([10, 11, 12, 13])
        path = tmp_path / "a.mxck"
        fileio.save_advset(path, x, y, idx, "cfg")
        lx, ly, li, cfg = fileio.load_advset(path)
        npt.assert_array_equal(lx, x)
        npt.assert_array_equal(ly, y)
        npt.assert_array_equal(li, idx)
        assert cfg == "cfg"
