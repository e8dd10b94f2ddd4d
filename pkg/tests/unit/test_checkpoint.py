import json
import struct

import pytest
import numpy as np

from app.data.checkpoint import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from app.network.model import init_params
from app.network.params import ModelParams
from app.training.optim import AdamState, adam_step
from app.utils.error import (
    BadMagicError,
    CheckpointError,
    TruncatedCheckpointError,
    UnknownTensorError,
    VersionMismatchError,
)


def u32(value):
    return struct.pack("<I", value)


def header(count):
    return MAGIC + u32(FORMAT_VERSION) + u32(count)


@pytest.fixture
def saved(tmp_path, tiny_config):
    params = init_params(tiny_config, seed=4)
    return save_checkpoint(tmp_path / "model.gaun", params, tiny_config, step=17), params


class TestCheckpointRoundtrip:
    def test_bitwise_roundtrip(self, saved, tiny_config):
        """Parameters and config survive a save and load bit for bit."""
        path, params = saved
        checkpoint = load_checkpoint(path)
        assert checkpoint.step == 17
        assert checkpoint.config == tiny_config
        restored = checkpoint.params().arrays()
        assert list(restored) == list(params.arrays())
        for name, value in params.arrays().items():
            assert restored[name].dtype == np.float32
            assert restored[name].tobytes() == value.tobytes()

    def test_no_optimizer_state(self, saved):
        """A checkpoint saved without Adam moments restores no optimizer state."""
        assert load_checkpoint(saved[0]).adam_state() is None

    def test_optimizer_state_roundtrip(self, tmp_path, tiny_config, rng):
        """Adam moments and step count come back exactly."""
        params = init_params(tiny_config)
        for _, tensor in params.items():
            tensor.grad = rng.normal(size=tensor.shape)
        state = AdamState()
        adam_step(params, state, lr=1e-3)
        path = save_checkpoint(tmp_path / "model.gaun", params, tiny_config, step=1, adam=state)
        restored = load_checkpoint(path).adam_state()
        assert restored.t == 1
        assert restored.m.keys() == state.m.keys()
        for name in state.m:
            np.testing.assert_array_equal(restored.m[name], state.m[name])
            np.testing.assert_array_equal(restored.v[name], state.v[name])

    def test_header(self, saved):
        """Files open with the magic bytes and the format version."""
        data = saved[0].read_bytes()
        assert data[:4] == MAGIC
        assert struct.unpack("<I", data[4:8])[0] == FORMAT_VERSION


class TestCheckpointErrors:
    """Each kind of damage maps to its own error."""

    def test_bad_magic(self, saved):
        """Foreign bytes at the start are refused as a bad magic."""
        path = saved[0]
        path.write_bytes(b"NOPE" + path.read_bytes()[4:])
        with pytest.raises(BadMagicError):
            load_checkpoint(path)

    def test_version_mismatch(self, saved):
        """A newer format version is refused."""
        path = saved[0]
        data = path.read_bytes()
        path.write_bytes(data[:4] + struct.pack("<I", FORMAT_VERSION + 1) + data[8:])
        with pytest.raises(VersionMismatchError):
            load_checkpoint(path)

    def test_truncated_payload_names_tensor(self, saved):
        """A cut inside a payload names the tensor being read."""
        path, params = saved
        name, value = next(iter(params.arrays().items()))
        payload_start = 12 + 4 + len(name.encode("utf-8")) + 4 + 4 * value.ndim
        path.write_bytes(path.read_bytes()[: payload_start + 2])
        with pytest.raises(TruncatedCheckpointError, match=f"tensor '{name}'"):
            load_checkpoint(path)

    def test_truncated_trailer(self, saved):
        """A cut inside the JSON trailer is reported as truncation."""
        path = saved[0]
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(TruncatedCheckpointError, match="config trailer"):
            load_checkpoint(path)

    def test_unknown_tensor(self, tmp_path, tiny_config):
        """Tensors the architecture does not know are rejected on restore."""
        params = init_params(tiny_config)
        extra = ModelParams(dict(params.items()))
        extra.add("head.extra", np.zeros(3))
        path = save_checkpoint(tmp_path / "model.gaun", extra, tiny_config, step=0)
        with pytest.raises(UnknownTensorError, match="head.extra"):
            load_checkpoint(path).params()

    def test_missing_tensor(self, tmp_path, tiny_config):
        """A tensor missing from the file is named on restore."""
        params = init_params(tiny_config)
        partial = ModelParams({k: v for k, v in params.items() if k != "head.fc.b"})
        path = save_checkpoint(tmp_path / "model.gaun", partial, tiny_config, step=0)
        with pytest.raises(CheckpointError, match="head.fc.b"):
            load_checkpoint(path).params()

    def test_missing_file(self, tmp_path):
        """A missing file raises CheckpointError."""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.gaun")

    def test_trailer_without_step(self, tmp_path, tiny_config):
        """A trailer without the step counter is a truncated checkpoint."""
        trailer = json.dumps({"config": tiny_config.model_dump(mode="json")}).encode("utf-8")
        path = tmp_path / "model.gaun"
        path.write_bytes(header(0) + u32(len(trailer)) + trailer)
        with pytest.raises(TruncatedCheckpointError, match="lacks step"):
            load_checkpoint(path)

    def test_trailer_with_bad_config(self, tmp_path):
        """A trailer whose config fails validation is a corrupt checkpoint."""
        trailer = json.dumps({"config": {"head": "wide"}, "step": 3}).encode("utf-8")
        path = tmp_path / "model.gaun"
        path.write_bytes(header(0) + u32(len(trailer)) + trailer)
        with pytest.raises(CheckpointError, match="Corrupt config trailer"):
            load_checkpoint(path)

    @pytest.mark.parametrize(
        "shape_bytes",
        [u32(0xFFFFFFFF), u32(3) + u32(0xFFFFFFFF) * 3, u32(2) + u32(2**31) + u32(2**31)],
        ids=["huge-rank", "overflowing-dims", "int64-wraparound"],
    )
    def test_corrupt_shape_is_truncation(self, tmp_path, shape_bytes):
        """Ranks and dimensions larger than the file are truncation, not overflow."""
        path = tmp_path / "model.gaun"
        path.write_bytes(header(1) + u32(1) + b"w" + shape_bytes + b"\x00" * 64)
        with pytest.raises(TruncatedCheckpointError, match="tensor 'w'"):
            load_checkpoint(path)
