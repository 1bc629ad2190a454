"""
Tests for the conditional Gaussian bridge.
"""

import numpy as np
import pytest

from src.core.errors import DimensionMismatchError, DomainError, SingularityError, ZeroBandwidthError
from src.data.models import PathConfig
from src.flow.paths import (
    clamp_time,
    conditional_score,
    conditional_score_order2,
    conditional_score_orderk,
    conditional_velocity,
    gaussian_log_density,
    sample_bridge,
    sigma_schedule,
)


class TestSigmaSchedule:
    def test_endpoints_and_midpoint(self, path_config):
        assert sigma_schedule(0.0, path_config) == 0.0
        assert sigma_schedule(1.0, path_config) == 0.0
        assert sigma_schedule(0.5, path_config) == pytest.approx(0.1)

    def test_vectorized(self, path_config):
        t = np.array([0.25, 0.75])
        np.testing.assert_allclose(sigma_schedule(t, path_config), 0.2 * np.sqrt(0.1875))

    def test_outside_unit_interval(self, path_config):
        with pytest.raises(DomainError):
            sigma_schedule(1.5, path_config)

    def test_clamp(self, path_config):
        np.testing.assert_allclose(clamp_time(np.array([0.0, 0.5, 1.0]), path_config), [1e-3, 0.5, 1 - 1e-3])


class TestSampleBridge:
    def test_mean_and_noise(self, rng, path_config):
        x0 = rng.standard_normal((16, 3))
        x1 = rng.standard_normal((16, 3))
        t = rng.uniform(0.1, 0.9, 16)
        sample = sample_bridge(x0, x1, t, path_config, rng)
        np.testing.assert_allclose(sample.mu_t, t[:, None] * x1 + (1 - t[:, None]) * x0)
        np.testing.assert_allclose(sample.xt, sample.mu_t + sample.sigma_t[:, None] * sample.eps0)
        assert sample.batch_size == 16

    def test_clamps_times_by_default(self, rng, path_config):
        x = rng.standard_normal((2, 2))
        sample = sample_bridge(x, x, np.array([0.0, 1.0]), path_config, rng)
        np.testing.assert_allclose(sample.t, [1e-3, 1 - 1e-3])
        assert np.all(sample.sigma_t > 0)

    def test_single_vector(self, rng, path_config):
        sample = sample_bridge(np.zeros(2), np.ones(2), 0.5, path_config, eps0=np.array([1.0, -1.0]))
        np.testing.assert_allclose(sample.xt, [0.6, 0.4])
        assert sample.batch_size == 1

    def test_shape_mismatch(self, rng, path_config):
        with pytest.raises(DimensionMismatchError):
            sample_bridge(np.zeros((2, 2)), np.zeros((2, 3)), 0.5, path_config, rng)

    def test_scalar_time_with_batch(self, rng, path_config):
        sample = sample_bridge(np.zeros((4, 2)), np.ones((4, 2)), 0.3, path_config, rng)
        np.testing.assert_allclose(sample.t, np.full(4, 0.3))


class TestConditionalVelocity:
    def test_value(self):
        np.testing.assert_allclose(conditional_velocity(np.zeros(2), np.ones(2), 0.5), [2.0, 2.0])

    def test_per_row_times(self):
        v = conditional_velocity(np.zeros((2, 1)), np.ones((2, 1)), np.array([0.0, 0.75]))
        np.testing.assert_allclose(v, [[1.0], [4.0]])

    def test_singular_near_one(self):
        with pytest.raises(SingularityError):
            conditional_velocity(np.zeros(2), np.ones(2), 0.9995)


class TestConditionalScores:
    """Closed-form derivatives against finite differences of the log-density."""

    def test_score_is_scaled_noise(self, rng, path_config):
        x0, x1 = rng.standard_normal((32, 4)), rng.standard_normal((32, 4))
        sample = sample_bridge(x0, x1, rng.uniform(0.05, 0.95, 32), path_config, rng)
        score = conditional_score(sample.xt, sample.mu_t, sample.sigma_t)
        np.testing.assert_allclose(score, -sample.eps0 / sample.sigma_t[:, None], rtol=1e-12)

    def test_score_matches_finite_differences(self, rng, path_config):
        sigma = float(sigma_schedule(0.5, path_config))
        h = 1e-5
        for _ in range(10):
            mu = rng.standard_normal(3)
            x = mu + sigma * rng.standard_normal(3)
            numeric = np.empty(3)
            for j in range(3):
                e = np.zeros(3)
                e[j] = h
                numeric[j] = (gaussian_log_density(x + e, mu, sigma) - gaussian_log_density(x - e, mu, sigma)) / (2 * h)
            np.testing.assert_allclose(conditional_score(x, mu, sigma), numeric, rtol=1e-4)

    def test_order2_matches_finite_differences(self, rng, path_config):
        sigma = float(sigma_schedule(0.3, path_config))
        h = 1e-3
        mu = rng.standard_normal(2)
        x = mu + sigma * rng.standard_normal(2)
        numeric = np.empty(2)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            up, mid, down = (gaussian_log_density(x + s * e, mu, sigma) for s in (1, 0, -1))
            numeric[j] = (up - 2 * mid + down) / h**2
        np.testing.assert_allclose(conditional_score_order2(sigma, 2), numeric, rtol=1e-4)

    def test_third_derivative_vanishes(self, rng, path_config):
        sigma = float(sigma_schedule(0.5, path_config))
        h = 1e-2
        mu = np.zeros(1)
        x = np.array([0.05])
        f = [gaussian_log_density(x + s * h, mu, sigma) for s in (2, 1, -1, -2)]
        third = (f[0] - 2 * f[1] + 2 * f[2] - f[3]) / (2 * h**3)
        assert abs(third) < 1e-4 * (1 / sigma**2)
        np.testing.assert_array_equal(conditional_score_orderk(3, 4), np.zeros(4))

    def test_orderk_rejects_low_orders(self):
        with pytest.raises(DomainError):
            conditional_score_orderk(2, 3)

    def test_zero_bandwidth(self):
        with pytest.raises(ZeroBandwidthError):
            conditional_score(np.zeros(2), np.zeros(2), 0.0)
        with pytest.raises(ZeroBandwidthError):
            conditional_score_order2(0.0, 2)

    def test_log_density_standard_normal(self):
        assert gaussian_log_density(np.zeros(2), np.zeros(2), 1.0) == pytest.approx(-np.log(2 * np.pi))

    def test_custom_bandwidth(self):
        cfg = PathConfig(sigma0=1.0)
        assert sigma_schedule(0.5, cfg) == pytest.approx(0.5)
