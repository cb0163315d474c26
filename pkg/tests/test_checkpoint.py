import numpy as np
import pytest

from oudefend.checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from oudefend.config import model_config_from_text, model_config_text, parse_number
from oudefend.data import VideoBatch
from oudefend.errors import ConfigError, FormatError
from oudefend.models import BackboneConfig, OUDefendConfig, init_model
from oudefend.training import TrainConfig, evaluate, train_epoch


def make_model(seed=0):
    bcfg = BackboneConfig(widths=(4, 4, 8, 8), num_classes=3, insert_after="conv4")
    ocfg = OUDefendConfig(in_channels=8, reduce_ratio=4)
    return init_model(bcfg, ocfg, seed=seed)


class TestConfigText:
    def test_round_trip(self):
        model = make_model()
        text = model_config_text(model.bcfg, model.ocfg)
        bcfg, ocfg = model_config_from_text(text)
        assert bcfg == model.bcfg
        assert ocfg == model.ocfg

    def test_no_block(self):
        bcfg = BackboneConfig()
        text = model_config_text(bcfg, None)
        b2, o2 = model_config_from_text(text)
        assert b2 == bcfg and o2 is None

    def test_fraction_parser(self):
        assert parse_number("4/255") == 4 / 255
        assert parse_number("0.5") == 0.5
        with pytest.raises(ConfigError):
            parse_number("x/y")


class TestCheckpointRoundTrip:
    def test_params_and_stats_survive(self, tmp_path):
        model = make_model(seed=3)
        # make running stats nontrivial first
        rng = np.random.default_rng(0)
        data = VideoBatch(rng.random((8, 3, 2, 8, 8)),
                          rng.integers(0, 3, 8).astype(np.int64))
        train_epoch(model, data, TrainConfig(epochs=1, batch_size=4, lr=0.01), 0, {})

        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, epoch=1))
        loaded = model_from_checkpoint(load_checkpoint(path))

        assert list(loaded.params) == list(model.params)
        for name in model.params:
            assert np.array_equal(loaded.params[name].data, model.params[name].data)
        for name in model.bn_state:
            assert np.array_equal(loaded.bn_state[name].running_mean,
                                  model.bn_state[name].running_mean)
            assert np.array_equal(loaded.bn_state[name].running_var,
                                  model.bn_state[name].running_var)

    def test_save_load_save_is_byte_identical(self, tmp_path):
        model = make_model(seed=4)
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        save_checkpoint(p1, checkpoint_from_model(model, epoch=2))
        save_checkpoint(p2, load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_epoch_preserved(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint_from_model(make_model(), epoch=7))
        assert load_checkpoint(path).epoch == 7

    def test_evaluation_reproduced_exactly(self, tmp_path):
        model = make_model(seed=5)
        rng = np.random.default_rng(1)
        data = VideoBatch(rng.random((6, 3, 2, 8, 8)),
                          rng.integers(0, 3, 6).astype(np.int64))
        before = evaluate(model, data)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, epoch=0))
        after = evaluate(model_from_checkpoint(load_checkpoint(path)), data)
        assert before == after


class TestCheckpointErrors:
    def write(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint_from_model(make_model(), epoch=0))
        return path

    def test_bad_magic(self, tmp_path):
        path = self.write(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"NOPE"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_version_mismatch_names_versions(self, tmp_path):
        path = self.write(tmp_path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9  # version field follows the 4-byte magic
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as err:
            load_checkpoint(path)
        assert "9" in str(err.value) and "1" in str(err.value)

    def test_truncation(self, tmp_path):
        path = self.write(tmp_path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 17])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_missing_meta(self, tmp_path):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, Checkpoint(config_text="", epoch=0))
        # strip the meta entries by writing a checkpoint with zero tensors
        import struct
        path.write_bytes(b"OUDF" + struct.pack("<II", 1, 0))
        with pytest.raises(FormatError):
            load_checkpoint(path)
