import struct

import numpy as np
import pytest

from modules.checkpoint_manager import (
    Checkpoint,
    decode_checkpoint,
    encode_checkpoint,
    list_entries,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
    to_checkpoint,
)
from modules.lab_assets import (
    CheckpointFormatError,
    CheckpointLengthError,
    CheckpointMismatchError,
    CheckpointVersionError,
)
from modules.train_model import TrainConfig, new_train_state, run_training


def _all_arrays(bundle):
    out = {}
    for name, net in bundle.nets.items():
        for i, layer in enumerate(net.layers):
            for key, value in layer.params.items():
                out[f"{name}.{i}.{key}"] = value
            if hasattr(layer, "running_var"):
                out[f"{name}.{i}.running_mean"] = layer.running_mean
                out[f"{name}.{i}.running_var"] = layer.running_var
    return out


@pytest.fixture
def trained_state(toy_dataset, tiny_config):
    return run_training(tiny_config, toy_dataset)


@pytest.fixture
def raw_checkpoint(trained_state):
    return encode_checkpoint(to_checkpoint(trained_state.bundle, trained_state))


class TestCodec:
    def test_decode_then_encode_is_bitwise_stable(self, raw_checkpoint):
        assert encode_checkpoint(decode_checkpoint(raw_checkpoint)) == raw_checkpoint

    def test_entries_survive_bitwise(self, trained_state, raw_checkpoint):
        original = to_checkpoint(trained_state.bundle, trained_state)
        decoded = decode_checkpoint(raw_checkpoint)
        assert list(decoded.entries) == list(original.entries)
        for name, array in original.entries.items():
            assert decoded.entries[name].dtype == np.float64
            np.testing.assert_array_equal(decoded.entries[name], array)

    def test_layout_starts_with_magic_and_version(self, raw_checkpoint):
        assert raw_checkpoint[:4] == b"BGLB"
        assert struct.unpack("<I", raw_checkpoint[4:8]) == (1,)

    def test_scalar_and_empty_entries(self):
        checkpoint = Checkpoint({"model_kind": "bigan"}, {"s": np.array(2.5), "e": np.zeros((0, 3))})
        decoded = decode_checkpoint(encode_checkpoint(checkpoint))
        assert decoded.entries["s"].shape == () and decoded.entries["s"] == 2.5
        assert decoded.entries["e"].shape == (0, 3)

    def test_truncation_names_the_entry(self, trained_state, raw_checkpoint):
        last = list(to_checkpoint(trained_state.bundle, trained_state).entries)[-1]
        with pytest.raises(CheckpointLengthError) as err:
            decode_checkpoint(raw_checkpoint[:-5])
        assert last in str(err.value)

    def test_bad_magic(self, raw_checkpoint):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(b"XXXX" + raw_checkpoint[4:])

    def test_unknown_version(self, raw_checkpoint):
        with pytest.raises(CheckpointVersionError):
            decode_checkpoint(raw_checkpoint[:4] + struct.pack("<I", 2) + raw_checkpoint[8:])

    def test_trailing_bytes(self, raw_checkpoint):
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(raw_checkpoint + b"\x00")

    def test_unknown_dtype_tag(self):
        raw = bytearray(encode_checkpoint(Checkpoint({"model_kind": "bigan"}, {"w": np.zeros(2)})))
        (header_len,) = struct.unpack("<I", raw[8:12])
        # magic, version, header length, header, entry count, name length, name
        raw[12 + header_len + 4 + 2 + 1] = 2
        with pytest.raises(CheckpointFormatError):
            decode_checkpoint(bytes(raw))


class TestFiles:
    def test_save_then_load(self, tmp_path, trained_state):
        path = str(tmp_path / "bigan_final.bglb")
        save_checkpoint(path, trained_state.bundle, trained_state)
        bundle, state = load_checkpoint(path)
        assert bundle.kind == "bigan"
        expected = _all_arrays(trained_state.bundle)
        for key, value in _all_arrays(bundle).items():
            np.testing.assert_array_equal(value, expected[key])
        assert state.epoch == trained_state.epoch and state.iteration == trained_state.iteration
        assert state.optim["E"].t == trained_state.optim["E"].t

    def test_model_only_checkpoint(self, tmp_path, trained_state):
        path = str(tmp_path / "model.bglb")
        save_checkpoint(path, trained_state.bundle)
        _, state = load_checkpoint(path)
        assert state is None
        assert not any(name.startswith("adam.") for name, _ in list_entries(path))

    def test_entry_listing(self, tmp_path, trained_state, tiny_config):
        path = str(tmp_path / "c.bglb")
        save_checkpoint(path, trained_state.bundle, trained_state)
        listing = dict(list_entries(path))
        assert listing["net.E.layer0.W"] == (16, tiny_config.hidden_units)
        assert "adam.D.layer0.m.W" in listing
        assert read_checkpoint(path).model_kind == "bigan"

    def test_identical_runs_write_identical_bytes(self, tmp_path, toy_dataset, tiny_config):
        paths = []
        for tag in ("a", "b"):
            state = run_training(tiny_config, toy_dataset)
            paths.append(save_checkpoint(str(tmp_path / f"{tag}.bglb"), state.bundle, state))
        assert open(paths[0], "rb").read() == open(paths[1], "rb").read()

    def test_resume_through_a_file(self, tmp_path, toy_dataset, tiny_config):
        config = TrainConfig(**{**tiny_config.to_dict(), "epochs": 2})
        whole = run_training(config, toy_dataset)

        half = run_training(config, toy_dataset, until_epoch=1)
        path = save_checkpoint(str(tmp_path / "half.bglb"), half.bundle, half)
        _, resumed = load_checkpoint(path)
        resumed = run_training(config, toy_dataset, resumed)

        expected = _all_arrays(whole.bundle)
        for key, value in _all_arrays(resumed.bundle).items():
            np.testing.assert_array_equal(value, expected[key])
        assert [r.d_loss for r in resumed.report.records] == [r.d_loss for r in whole.report.records]

    def test_kind_mismatch(self, tmp_path, trained_state, tiny_config):
        path = save_checkpoint(str(tmp_path / "bigan.bglb"), trained_state.bundle)
        gan = new_train_state(TrainConfig(**{**tiny_config.to_dict(), "model_kind": "gan"}), 16).bundle
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, gan)

    def test_shape_mismatch(self, tmp_path, trained_state, tiny_config):
        path = save_checkpoint(str(tmp_path / "bigan.bglb"), trained_state.bundle)
        wider = new_train_state(TrainConfig(**{**tiny_config.to_dict(), "hidden_units": 13}), 16).bundle
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(path, wider)
