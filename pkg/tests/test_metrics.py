"""
Tests for MMD and trajectory scores.
"""

import numpy as np
import pandas as pd
import pytest
from scipy.spatial.distance import cdist

from src.core.errors import DimensionMismatchError, DomainError, ZeroBandwidthError
from src.core.rng import make_rng
from src.evaluation.metrics import (
    median_bandwidth,
    mmd2_rbf,
    mmd_rows,
    trajectory_rows,
    trajectory_scores,
    write_metrics,
)


def direct_mmd2(X, Y, h):
    k = lambda A, B: np.exp(-cdist(A, B, "sqeuclidean") / (2 * h * h))
    n, m = len(X), len(Y)
    kxx = (k(X, X).sum() - n) / (n * (n - 1))
    kyy = (k(Y, Y).sum() - m) / (m * (m - 1))
    return kxx + kyy - 2 * k(X, Y).mean()


class TestMMD:
    def test_identical_sets(self, rng):
        X = rng.standard_normal((200, 2))
        result = mmd2_rbf(X, X)
        assert -2.0 / 199 - 1e-12 <= result.mmd2 <= 1e-12

    def test_same_distribution_is_small(self):
        X = make_rng(0).standard_normal((800, 2))
        Y = make_rng(1).standard_normal((800, 2))
        assert abs(mmd2_rbf(X, Y).mmd2) < 0.01

    def test_shift_is_detected(self):
        X = make_rng(0).standard_normal((500, 2))
        Y = make_rng(1).standard_normal((500, 2)) + 2.0
        assert mmd2_rbf(X, Y).mmd2 > 0.2

    def test_symmetric(self, rng):
        X, Y = rng.standard_normal((60, 3)), rng.standard_normal((40, 3)) + 0.5
        assert mmd2_rbf(X, Y).mmd2 == pytest.approx(mmd2_rbf(Y, X).mmd2, rel=1e-12)

    def test_blockwise_matches_direct(self):
        X = make_rng(2).standard_normal((1500, 2))
        Y = make_rng(3).standard_normal((1100, 2)) * 1.3
        result = mmd2_rbf(X, Y, bandwidth=0.8)
        assert result.mmd2 == pytest.approx(direct_mmd2(X, Y, 0.8), rel=1e-9, abs=1e-12)
        assert (result.n, result.m) == (1500, 1100)

    def test_median_bandwidth(self):
        X = np.array([[0.0], [1.0]])
        Y = np.array([[3.0], [4.0]])
        # pairwise distances 1, 3, 4, 2, 3, 1
        assert median_bandwidth(X, Y) == pytest.approx(2.5)

    def test_zero_bandwidth(self):
        X = np.ones((5, 2))
        with pytest.raises(ZeroBandwidthError):
            mmd2_rbf(X, X)
        with pytest.raises(ZeroBandwidthError):
            mmd2_rbf(np.zeros((3, 2)), np.ones((3, 2)), bandwidth=0.0)

    def test_input_errors(self, rng):
        with pytest.raises(DimensionMismatchError):
            mmd2_rbf(rng.standard_normal((5, 2)), rng.standard_normal((5, 3)))
        with pytest.raises(DomainError):
            mmd2_rbf(rng.standard_normal((1, 2)), rng.standard_normal((5, 2)))


class TestTrajectoryScores:
    def test_identity(self, rng):
        truth = rng.standard_normal((50, 3))
        scores = trajectory_scores(truth, truth)
        assert scores.mae == 0.0
        assert scores.rmse == 0.0
        assert scores.cc == pytest.approx(100.0)

    def test_values(self):
        truth = np.array([[0.0], [1.0], [2.0], [3.0]])
        pred = truth + np.array([[1.0], [-1.0], [1.0], [-1.0]])
        scores = trajectory_scores(pred, truth)
        assert scores.mae == pytest.approx(1.0)
        assert scores.rmse == pytest.approx(1.0)
        assert scores.cc < 100.0

    def test_anticorrelated(self):
        truth = np.linspace(0, 1, 10)
        assert trajectory_scores(-truth, truth).cc == pytest.approx(-100.0)

    def test_zero_variance(self):
        with pytest.raises(DomainError):
            trajectory_scores(np.ones((10, 2)), np.arange(20.0).reshape(10, 2))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            trajectory_scores(np.zeros((10, 2)), np.zeros((9, 2)))


class TestMetricFiles:
    def test_columns(self, rng, tmp_path):
        X = rng.standard_normal((20, 2))
        truth = rng.standard_normal((20, 2))
        rows = mmd_rows(mmd2_rbf(X, X + 1.0)) + trajectory_rows(trajectory_scores(truth + 0.1, truth))
        frame = pd.read_csv(write_metrics(rows, tmp_path / "out" / "metrics.csv"))
        assert list(frame.columns) == ["metric", "value", "detail"]
        assert list(frame["metric"]) == ["mmd2", "bandwidth", "mae", "rmse", "cc"]
