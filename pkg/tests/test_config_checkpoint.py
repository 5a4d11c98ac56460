"""Config parsing and the checkpoint container."""

import numpy as np
import pytest

from tsdiff.autodiff import ParameterStore
from tsdiff.checkpoint import (
    Checkpoint,
    TrainState,
    load_checkpoint,
    save_checkpoint,
)
from tsdiff.config import Config, apply_overrides, config_to_text, parse_config_text
from tsdiff.errors import CheckpointError, ConfigError


class TestConfig:
    def test_parse_key_value(self):
        cfg = parse_config_text("hidden=16\nlr=0.01\n# comment\n\nepochs=5")
        assert cfg.hidden == 16 and cfg.lr == 0.01 and cfg.epochs == 5

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config_text("not_a_knob=3")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config_text("hidden=banana")

    def test_bool_parsing(self):
        cfg = parse_config_text("matched_logits_all_layers=true")
        assert cfg.matched_logits_all_layers is True

    def test_validation(self):
        with pytest.raises(ConfigError):
            Config(beta_start=0.5, beta_end=0.1)
        with pytest.raises(ConfigError):
            Config(dropout=1.0)
        with pytest.raises(ConfigError):
            Config(norm_mode="sideways")

    def test_overrides(self):
        cfg = Config(hidden=8)
        cfg2 = apply_overrides(cfg, ["hidden=12", "lr=0.5"])
        assert cfg2.hidden == 12 and cfg2.lr == 0.5

    def test_text_round_trip(self):
        cfg = Config(hidden=24, dropout=0.2, norm_mode="tokens")
        back = parse_config_text(config_to_text(cfg))
        assert back == cfg


class TestCheckpoint:
    def make(self):
        ps = ParameterStore()
        rng = np.random.default_rng(0)
        ps.add_normal("a.w", (3, 4), rng)
        ps.add_normal("b.v", (5,), rng)
        ps.adam_m["a.w"][...] = 0.25
        ps.step_count = 7
        return Checkpoint(
            params=ps, config=Config(hidden=8, dim=2),
            feature_mean=np.array([1.0, 2.0]),
            feature_std=np.array([0.5, 4.0]),
            horizon_variance=0.125,
            train_state=TrainState(epoch=3, rng_state={
                "bit_generator": "PCG64",
                "state": {"state": 123, "inc": 5}, "has_uint32": 0,
                "uinteger": 0,
            }),
        )

    def test_round_trip(self, tmp_path):
        ck = self.make()
        path = tmp_path / "m.npz"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)
        assert back.config == ck.config
        assert back.horizon_variance == 0.125
        assert back.train_state.epoch == 3
        assert back.params.step_count == 7
        np.testing.assert_array_equal(back.feature_mean, [1.0, 2.0])
        for name in ck.params.params:
            np.testing.assert_array_equal(back.params.params[name],
                                          ck.params.params[name])
            np.testing.assert_array_equal(back.params.adam_m[name],
                                          ck.params.adam_m[name])

    def test_float_payload_is_bit_exact(self, tmp_path):
        ck = self.make()
        ck.params.params["a.w"][0, 0] = np.nextafter(1.0, 2.0)
        path = tmp_path / "m.npz"
        save_checkpoint(path, ck)
        back = load_checkpoint(path)
        assert back.params.params["a.w"][0, 0] == np.nextafter(1.0, 2.0)

    def test_version_mismatch(self, tmp_path):
        import json

        ck = self.make()
        path = tmp_path / "m.npz"
        save_checkpoint(path, ck)
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
        meta = json.loads(bytes(arrays["__meta__"].tobytes()))
        meta["version"] = 999
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(path, **arrays)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.npz"
        np.savez(path, a=np.ones(3))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "none.npz")
