"""
Tests for the IDFF network, head conversions and checkpoint persistence.
"""

import json

import numpy as np
import pytest

from src.core.errors import (
    CheckpointError,
    ConfigurationError,
    DimensionMismatchError,
    DomainError,
    ZeroBandwidthError,
)
from src.data.checkpoint import checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from src.data.models import GammaSchedule, ModelConfig, PathConfig
from src.flow.network import HeadOutputs, IDFFNet, score_from_heads, sinusoidal_features


class TestForward:
    def test_zero_heads_at_init(self, small_model, rng):
        xt = rng.standard_normal((5, 2))
        out = small_model.forward(xt, 0.3)
        np.testing.assert_array_equal(out.x1_hat, xt)
        assert out.K == 2
        for n_hat in out.n_hat:
            np.testing.assert_array_equal(n_hat, np.zeros((5, 2)))

    def test_single_vector_matches_batch(self, perturbed_model, rng):
        xt = rng.standard_normal((3, 2))
        batch = perturbed_model.forward(xt, np.array([0.1, 0.5, 0.9]))
        single = perturbed_model.forward(xt[1], 0.5)
        assert single.x1_hat.shape == (2,)
        np.testing.assert_allclose(single.x1_hat, batch.x1_hat[1])
        np.testing.assert_allclose(single.n_hat[0], batch.n_hat[0][1])

    def test_time_changes_output(self, perturbed_model):
        x = np.zeros(2)
        assert not np.allclose(perturbed_model.forward(x, 0.1).x1_hat, perturbed_model.forward(x, 0.9).x1_hat)

    def test_predict_is_forward(self, perturbed_model, rng):
        xt = rng.standard_normal((2, 2))
        np.testing.assert_array_equal(perturbed_model.predict(xt, 0.4).x1_hat, perturbed_model.forward(xt, 0.4).x1_hat)

    def test_input_validation(self, small_model):
        with pytest.raises(DimensionMismatchError):
            small_model.forward(np.zeros((2, 3)), 0.5)
        with pytest.raises(DimensionMismatchError):
            small_model.forward(np.zeros((2, 2)), np.array([0.1, 0.2, 0.3]))
        with pytest.raises(DomainError):
            small_model.forward(np.zeros(2), 1.5)
        with pytest.raises(ConfigurationError):
            small_model.forward(np.zeros(2), 0.5, n=1)

    def test_sinusoidal_features(self):
        feats = sinusoidal_features(np.array([0.0, 0.5]))
        assert feats.shape == (2, 16)
        np.testing.assert_allclose(feats[0, :8], 0.0)
        np.testing.assert_allclose(feats[0, 8:], 1.0)


class TestStepConditioning:
    @pytest.fixture
    def ts_model(self):
        model = IDFFNet(ModelConfig(data_dim=3, hidden_dim=8, depth=1, K=1, time_embed_dim=4, n_embed=4), seed=1)
        model.params["head0_w"].data = np.full(model.params["head0_w"].shape, 0.5)
        return model

    def test_step_changes_output(self, ts_model):
        x = np.ones(3)
        assert not np.allclose(ts_model.forward(x, 0.5, n=1).x1_hat, ts_model.forward(x, 0.5, n=3).x1_hat)

    def test_step_required_and_bounded(self, ts_model):
        assert ts_model.n_steps == 4
        with pytest.raises(ConfigurationError):
            ts_model.forward(np.ones(3), 0.5)
        with pytest.raises(DomainError):
            ts_model.forward(np.ones(3), 0.5, n=5)
        with pytest.raises(DomainError):
            ts_model.forward(np.ones(3), 0.5, n=0)

    def test_per_row_steps(self, ts_model, rng):
        xt = rng.standard_normal((2, 3))
        batch = ts_model.forward(xt, 0.5, n=np.array([1, 4]))
        np.testing.assert_allclose(batch.x1_hat[1], ts_model.forward(xt[1], 0.5, n=4).x1_hat)


class TestScoreFromHeads:
    def test_conversions(self):
        out = HeadOutputs(x1_hat=np.zeros(2), n_hat=[np.array([1.0, 2.0]), np.ones(2), np.ones(2)])
        first, second, third = score_from_heads(out, 0.5)
        np.testing.assert_allclose(first, [-2.0, -4.0])
        np.testing.assert_allclose(second, [-4.0, -4.0])
        np.testing.assert_allclose(third, [8.0, 8.0])

    def test_ideal_second_head_recovers_hessian(self):
        sigma = 0.07
        out = HeadOutputs(x1_hat=np.zeros((1, 3)), n_hat=[np.zeros((1, 3)), np.ones((1, 3))])
        np.testing.assert_allclose(score_from_heads(out, sigma)[1], -1.0 / sigma**2 * np.ones((1, 3)))

    def test_per_row_sigma(self):
        out = HeadOutputs(x1_hat=np.zeros((2, 1)), n_hat=[np.ones((2, 1))])
        np.testing.assert_allclose(score_from_heads(out, np.array([1.0, 0.5]))[0], [[-1.0], [-2.0]])

    def test_zero_sigma(self):
        with pytest.raises(ZeroBandwidthError):
            score_from_heads(HeadOutputs(x1_hat=np.zeros(2), n_hat=[np.zeros(2)]), 0.0)


class TestParameters:
    def test_seed_determines_init(self, small_model_config):
        a, b = IDFFNet(small_model_config, seed=4), IDFFNet(small_model_config, seed=4)
        for name, value in a.state_dict().items():
            np.testing.assert_array_equal(value, b.state_dict()[name])

    def test_state_dict_round_trip(self, perturbed_model, small_model_config):
        clone = IDFFNet(small_model_config, seed=0)
        clone.load_state_dict(perturbed_model.state_dict())
        for name, value in perturbed_model.state_dict().items():
            np.testing.assert_array_equal(clone.state_dict()[name], value)

    def test_load_rejects_mismatch(self, small_model):
        state = small_model.state_dict()
        state.pop("head0_b")
        with pytest.raises(ConfigurationError):
            small_model.load_state_dict(state)
        state = small_model.state_dict()
        state["head0_b"] = np.zeros(5)
        with pytest.raises(DimensionMismatchError):
            small_model.load_state_dict(state)

    def test_copy_is_independent(self, small_model):
        clone = small_model.copy()
        clone.params["head0_b"].data = np.ones(2)
        np.testing.assert_array_equal(small_model.params["head0_b"].data, np.zeros(2))

    def test_copy_keeps_path(self, small_model_config):
        model = IDFFNet(small_model_config, seed=0, path=PathConfig(sigma0=0.5))
        assert model.copy().path.sigma0 == 0.5
        assert IDFFNet(small_model_config, seed=0).path == PathConfig()


class TestCheckpoint:
    def test_round_trip_is_bitwise(self, perturbed_model, tmp_path):
        gamma = GammaSchedule(c=[0.7], gamma0_mode="unit")
        path = save_checkpoint(checkpoint_from_model(perturbed_model, PathConfig(sigma0=0.3), gamma), tmp_path / "m.ckpt")
        ckpt = load_checkpoint(path)
        restored = model_from_checkpoint(ckpt)
        for name, value in perturbed_model.state_dict().items():
            np.testing.assert_array_equal(restored.state_dict()[name], value)
        assert ckpt.path.sigma0 == 0.3
        assert ckpt.gamma == gamma
        assert restored.config == perturbed_model.config
        assert restored.path == ckpt.path

    def test_model_path_is_saved_by_default(self, small_model_config, tmp_path):
        model = IDFFNet(small_model_config, seed=1, path=PathConfig(sigma0=0.45))
        ckpt = load_checkpoint(save_checkpoint(checkpoint_from_model(model), tmp_path / "m.ckpt"))
        assert ckpt.path.sigma0 == 0.45
        assert model_from_checkpoint(ckpt).path.sigma0 == 0.45

    def test_version_guard(self, small_model, tmp_path):
        path = save_checkpoint(checkpoint_from_model(small_model), tmp_path / "m.ckpt")
        payload = json.loads(path.read_text())
        payload["format_version"] = "idff-ckpt/0"
        path.write_text(json.dumps(payload))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_text("not json")
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_parameters_must_match_config(self, small_model, tmp_path):
        ckpt = checkpoint_from_model(small_model)
        ckpt.params.pop("head1_w")
        with pytest.raises(CheckpointError):
            model_from_checkpoint(ckpt)
