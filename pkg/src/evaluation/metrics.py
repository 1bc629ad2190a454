"""
Evaluation metrics: squared MMD between sample sets and trajectory agreement scores.
"""

from pathlib import Path
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist, pdist

from src.core.errors import DimensionMismatchError, DomainError, ZeroBandwidthError
from src.data.models import MMDResult, TrajectoryScores

# Bandwidth median is taken over at most this many points of each sample.
MEDIAN_SUBSET = 1024
BLOCK_ROWS = 1024


def _subset(x: np.ndarray) -> np.ndarray:
    stride = max(1, int(np.ceil(x.shape[0] / MEDIAN_SUBSET)))
    return x[::stride]


def median_bandwidth(X: np.ndarray, Y: np.ndarray) -> float:
    """Median pairwise distance of the pooled sample."""
    pooled = np.concatenate([_subset(X), _subset(Y)], axis=0)
    h = float(np.median(pdist(pooled)))
    if h <= 0.0:
        raise ZeroBandwidthError("all pooled points coincide; the median bandwidth is zero")
    return h


def _kernel_sum(A: np.ndarray, B: np.ndarray, h: float) -> float:
    total = 0.0
    for start in range(0, A.shape[0], BLOCK_ROWS):
        d2 = cdist(A[start:start + BLOCK_ROWS], B, metric="sqeuclidean")
        total += float(np.sum(np.exp(-d2 / (2.0 * h * h))))
    return total


def mmd2_rbf(X: np.ndarray, Y: np.ndarray, bandwidth: Optional[float] = None) -> MMDResult:
    """Unbiased U-statistic estimate of squared MMD with a Gaussian kernel."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n, m = X.shape[0], Y.shape[0]
    if X.shape[1] != Y.shape[1]:
        raise DimensionMismatchError(f"sample dimensions differ: {X.shape[1]} vs {Y.shape[1]}")
    if n < 2 or m < 2:
        raise DomainError(f"MMD needs at least two points per sample, got {n} and {m}")

    h = median_bandwidth(X, Y) if bandwidth is None else float(bandwidth)
    if h <= 0.0:
        raise ZeroBandwidthError(f"bandwidth must be positive, got {bandwidth}")

    # exp(0) = 1 on each diagonal
    kxx = (_kernel_sum(X, X, h) - n) / (n * (n - 1))
    kyy = (_kernel_sum(Y, Y, h) - m) / (m * (m - 1))
    kxy = _kernel_sum(X, Y, h) / (n * m)
    return MMDResult(mmd2=kxx + kyy - 2.0 * kxy, bandwidth=h, n=n, m=m)


def trajectory_scores(pred: np.ndarray, truth: np.ndarray) -> TrajectoryScores:
    """MAE, RMSE and the mean per-dimension Pearson correlation (percent)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.ndim == 1:
        pred = pred[:, None]
    if truth.ndim == 1:
        truth = truth[:, None]
    if pred.shape != truth.shape:
        raise DimensionMismatchError(f"prediction {pred.shape} and truth {truth.shape} differ")
    if pred.shape[0] < 2:
        raise DomainError("trajectory scores need at least two time steps")

    error = pred - truth
    mae = float(np.mean(np.abs(error)))
    rmse = float(np.sqrt(np.mean(error * error)))

    correlations: List[float] = []
    for column in range(pred.shape[1]):
        p, q = pred[:, column], truth[:, column]
        if np.std(p) == 0.0 or np.std(q) == 0.0:
            raise DomainError(f"column {column} has zero variance; correlation is undefined")
        correlations.append(float(np.corrcoef(p, q)[0, 1]))
    return TrajectoryScores(mae=mae, rmse=rmse, cc=100.0 * float(np.mean(correlations)))


MetricRow = Tuple[str, float, str]


def metric_frame(rows: Iterable[MetricRow]) -> pd.DataFrame:
    return pd.DataFrame(list(rows), columns=["metric", "value", "detail"])


def mmd_rows(result: MMDResult) -> List[MetricRow]:
    detail = f"n={result.n};m={result.m};kernel=rbf"
    return [("mmd2", result.mmd2, detail), ("bandwidth", result.bandwidth, detail)]


def trajectory_rows(scores: TrajectoryScores) -> List[MetricRow]:
    return [("mae", scores.mae, ""), ("rmse", scores.rmse, ""), ("cc", scores.cc, "percent")]


def write_metrics(rows: Iterable[MetricRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metric_frame(rows).to_csv(path, index=False, float_format="%.17g")
    return path
