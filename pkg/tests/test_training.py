"""
Tests for the IDFF objective and the training loops.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy.stats import chisquare

from src.config.settings import settings
from src.core.errors import (
    ConfigurationError,
    DimensionMismatchError,
    DivergenceError,
    OrderMismatchError,
    SingularityError,
)
from src.core.rng import make_rng, spawn
from src.data.models import LossBreakdown, TimeStrategy, TrainConfig
from src.flow.network import IDFFNet
from src.flow.paths import sample_bridge
from src.flow.training import (
    LossGraph,
    beta_weight,
    idff_loss,
    loss_from_heads,
    sample_time,
    standardized_targets,
    time_map,
    trace_frame,
    train_static,
    train_timeseries,
    write_trace,
)


@pytest.fixture
def bridge(rng, path_config):
    x0 = rng.standard_normal((16, 2))
    x1 = rng.standard_normal((16, 2))
    return sample_bridge(x0, x1, rng.uniform(0.05, 0.95, 16), path_config, rng)


class TestTimeSampling:
    @pytest.mark.parametrize(
        "strategy,u,expected",
        [
            ("linear", 0.3, 0.3),
            ("logarithmic", 1.0, 1.0),
            ("logarithmic", 0.5, math.log(1 + (math.e - 1) * 0.5)),
            ("beta", 0.25, 0.5),
            ("cosine", 1 / 3, 0.5),
        ],
    )
    def test_time_map(self, strategy, u, expected):
        assert time_map(strategy, u) == pytest.approx(expected)

    @pytest.mark.parametrize("strategy", [s.value for s in TimeStrategy])
    def test_range_and_endpoints(self, strategy, rng):
        assert time_map(strategy, 0.0) == pytest.approx(0.0)
        assert time_map(strategy, 1.0) == pytest.approx(1.0)
        t = sample_time(strategy, rng, 1000)
        assert t.shape == (1000,)
        assert np.all((t >= 0.0) & (t <= 1.0))

    def test_beta_strategy_skews_late(self, rng):
        assert np.mean(sample_time("beta", rng, 20000)) == pytest.approx(2 / 3, abs=0.01)

    def test_cosine_strategy_favours_late_times(self):
        t = sample_time("cosine", make_rng(0), 100_000)
        assert np.mean(t > 0.5) == pytest.approx(2 / 3, abs=0.01)

    def test_unknown_strategy(self, rng):
        with pytest.raises(ConfigurationError):
            sample_time("quadratic", rng, 4)


class TestObjective:
    def test_beta_weight(self):
        assert beta_weight(0.5) == pytest.approx(2.0)
        with pytest.raises(SingularityError):
            beta_weight(0.9999)

    def test_targets(self, bridge):
        targets = standardized_targets(bridge, 3)
        np.testing.assert_array_equal(targets[0], bridge.eps0)
        np.testing.assert_array_equal(targets[1], np.ones_like(bridge.eps0))
        np.testing.assert_array_equal(targets[2], np.zeros_like(bridge.eps0))

    def test_zero_init_loss_terms(self, small_model, bridge):
        loss = idff_loss(bridge, small_model, K=2)
        weight = 1.0 / (1.0 - bridge.t) ** 2
        expected_denoiser = np.mean(weight * np.sum((bridge.xt - bridge.x1) ** 2, axis=1))
        assert loss.denoiser == pytest.approx(expected_denoiser)
        assert loss.per_order[0] == pytest.approx(np.mean(np.sum(bridge.eps0**2, axis=1)))
        assert loss.per_order[1] == pytest.approx(2.0)
        assert loss.total == pytest.approx(loss.denoiser + sum(loss.per_order))

    def test_order_mismatch(self, small_model, bridge):
        with pytest.raises(OrderMismatchError):
            idff_loss(bridge, small_model, K=1)
        out = small_model.forward(bridge.xt, bridge.t)
        with pytest.raises(OrderMismatchError):
            loss_from_heads(out, bridge, K=3)

    def test_breakdown_must_decompose(self):
        with pytest.raises(ValidationError):
            LossBreakdown(total=1.0, denoiser=0.2, per_order=[0.3])

    def test_graph_loss_matches_direct_loss(self, perturbed_model, bridge):
        direct = idff_loss(bridge, perturbed_model, K=2)
        graph = LossGraph(perturbed_model).step(bridge)
        assert graph.total == pytest.approx(direct.total, rel=1e-12)
        np.testing.assert_allclose(graph.per_order, direct.per_order, rtol=1e-12)

    def test_graph_gradients_match_finite_differences(self, perturbed_model, bridge):
        model = perturbed_model
        LossGraph(model).step(bridge)
        analytic = {name: model.params[name].grad.copy() for name in model.params}
        h = 1e-6
        checked = 0
        for name in ("trunk0_w", "time_w", "head0_w", "head1_b", "head2_w"):
            for index in [(0,), (1,)] if model.params[name].data.ndim == 1 else [(0, 0), (1, 1), (2, 0)]:
                base = model.params[name].data.copy()
                model.params[name].data = base.copy()
                model.params[name].data[index] += h
                up = idff_loss(bridge, model, K=2).total
                model.params[name].data[index] -= 2 * h
                down = idff_loss(bridge, model, K=2).total
                model.params[name].data = base
                numeric = (up - down) / (2 * h)
                assert analytic[name][index] == pytest.approx(numeric, rel=1e-4, abs=1e-6)
                checked += 1
        assert checked == 14


class TestTrainStatic:
    def test_same_seed_same_trace(self, toy_rows, tiny_train_config, tmp_path):
        first = train_static(toy_rows, tiny_train_config)
        second = train_static(toy_rows, tiny_train_config)
        a = write_trace(first.trace, tmp_path / "a.csv").read_bytes()
        b = write_trace(second.trace, tmp_path / "b.csv").read_bytes()
        assert a == b
        assert len(first.trace) == tiny_train_config.iters

    def test_zero_iterations_returns_initialization(self, toy_rows, tiny_train_config):
        config = tiny_train_config.model_copy(update={"iters": 0})
        result = train_static(toy_rows, config)
        init_rng, _ = spawn(config.seed, 2)
        expected = IDFFNet(config.model_config_for(2), init_rng)
        for name, value in expected.state_dict().items():
            np.testing.assert_array_equal(result.model.state_dict()[name], value)
        assert result.trace == []
        assert result.final is None

    def test_loss_decreases(self, toy_rows, tiny_train_config):
        config = tiny_train_config.model_copy(update={"iters": 300, "lr": 3e-3})
        totals = [loss.total for loss in train_static(toy_rows, config).trace]
        assert np.mean(totals[-30:]) < np.mean(totals[:30])

    def test_ot_records_costs(self, toy_rows, tiny_train_config):
        config = tiny_train_config.model_copy(update={"use_ot": True, "iters": 10})
        trace = train_static(toy_rows, config).trace
        assert all(loss.coupling_cost <= loss.independent_cost + 1e-9 for loss in trace)
        assert {"coupling_cost", "independent_cost"} <= set(trace_frame(trace).columns)

    def test_ot_needs_two_rows(self):
        with pytest.raises(ValidationError):
            TrainConfig(batch_size=1, use_ot=True)

    def test_k0_trains_denoiser_only(self, toy_rows, tiny_train_config):
        config = tiny_train_config.model_copy(update={"K": 0, "iters": 3})
        result = train_static(toy_rows, config)
        assert result.model.K == 0
        assert all(loss.per_order == [] for loss in result.trace)

    def test_divergence_guard(self, toy_rows, tiny_train_config, monkeypatch):
        monkeypatch.setattr(settings, "DIVERGENCE_THRESHOLD", 1e-12)
        with pytest.raises(DivergenceError):
            train_static(toy_rows, tiny_train_config)

    def test_rejects_bad_data(self, tiny_train_config):
        with pytest.raises(DimensionMismatchError):
            train_static(np.zeros(5), tiny_train_config)

    @pytest.mark.slow
    def test_learns_single_gaussian_denoiser(self):
        rows = 3.0 + 0.1 * make_rng(3).standard_normal((4000, 1))
        config = TrainConfig(
            batch_size=128, iters=5000, lr=1e-3, hidden_dim=32, depth=2, time_embed_dim=8, K=1, seed=0, log_every=1000
        )
        model = train_static(rows, config).model
        gen = make_rng(4)
        x1 = 3.0 + 0.1 * gen.standard_normal((2000, 1))
        sample = sample_bridge(gen.standard_normal((2000, 1)), x1, np.full(2000, 0.99), config.path, gen)
        x1_hat = model.forward(sample.xt, sample.t).x1_hat
        assert abs(np.mean(x1_hat) - 3.0) < 0.1
        assert np.mean(np.abs(x1_hat - 3.0)) < 0.1


class TestTrainTimeseries:
    @pytest.fixture
    def windows(self, rng):
        walk = np.cumsum(0.1 * rng.standard_normal((60, 3)), axis=0)
        return np.stack([walk[s:s + 5] for s in range(50)])

    def test_step_conditioned_model(self, windows, tiny_train_config):
        result = train_timeseries(windows, tiny_train_config.model_copy(update={"iters": 5}))
        assert result.model.n_steps == 4
        assert result.model.data_dim == 3
        assert len(result.trace) == 5

    def test_single_step_is_static_training(self, windows, tiny_train_config):
        pairs = windows[:, :2]
        config = tiny_train_config.model_copy(update={"iters": 5})
        series = train_timeseries(pairs, config)
        static = train_static(pairs[:, -1], config)
        assert series.model.n_steps is None
        assert [loss.total for loss in series.trace] == [loss.total for loss in static.trace]

    def test_ot_is_rejected(self, windows, tiny_train_config):
        with pytest.raises(ConfigurationError):
            train_timeseries(windows, tiny_train_config.model_copy(update={"use_ot": True}))

    def test_steps_are_uniform(self, windows, tiny_train_config, monkeypatch):
        seen = []
        step = LossGraph.step

        def recording_step(graph, sample, n=None):
            seen.append(n.copy())
            return step(graph, sample, n)

        monkeypatch.setattr(LossGraph, "step", recording_step)
        train_timeseries(windows, tiny_train_config.model_copy(update={"batch_size": 1000, "iters": 100}))
        counts = np.bincount(np.concatenate(seen), minlength=5)
        assert counts[0] == 0
        assert counts.sum() == 100_000
        assert chisquare(counts[1:]).pvalue > 0.01

    def test_window_validation(self, windows, tiny_train_config):
        with pytest.raises(DimensionMismatchError):
            train_timeseries(windows[:, :1], tiny_train_config)
        with pytest.raises(DimensionMismatchError):
            train_timeseries(windows, tiny_train_config, N=2)
