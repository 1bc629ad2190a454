"""
Pairing of noise and data minibatches.

A coupling is a permutation ``perm``: noise row ``i`` is paired with data row
``perm[i]``.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from src.config.settings import settings
from src.core.errors import BatchSizeError, DimensionMismatchError
from src.data.models import CouplingMode

TIE_TOLERANCE = 1e-12


@dataclass
class Coupling:
    """A bijection between two equally sized batches and its transport cost."""
    perm: np.ndarray
    cost: float
    mode: CouplingMode

    def apply(self, x0: np.ndarray, x1: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return the re-paired batches (x0, x1[perm])."""
        return x0, x1[self.perm]


def transport_cost(x0: np.ndarray, x1: np.ndarray, perm: Optional[np.ndarray] = None) -> float:
    """Sum of squared Euclidean distances between paired rows."""
    paired = x1 if perm is None else x1[perm]
    diff = np.asarray(x0, dtype=np.float64) - paired
    return float(np.sum(diff * diff))


def _check_batches(x0: np.ndarray, x1: np.ndarray) -> None:
    if x0.ndim != 2 or x1.ndim != 2:
        raise DimensionMismatchError(f"batches must be 2D, got {x0.shape} and {x1.shape}")
    if x0.shape[0] != x1.shape[0]:
        raise BatchSizeError(f"batch sizes differ: {x0.shape[0]} vs {x1.shape[0]}")
    if x0.shape[1] != x1.shape[1]:
        raise DimensionMismatchError(f"data dimensions differ: {x0.shape[1]} vs {x1.shape[1]}")


def independent_coupling(
    B: int, x0: Optional[np.ndarray] = None, x1: Optional[np.ndarray] = None
) -> Coupling:
    """Identity pairing; the cost is reported when both batches are given."""
    if B < 1:
        raise BatchSizeError(f"batch size must be >= 1, got {B}")
    perm = np.arange(B)
    cost = 0.0
    if x0 is not None and x1 is not None:
        x0 = np.asarray(x0, dtype=np.float64)
        x1 = np.asarray(x1, dtype=np.float64)
        _check_batches(x0, x1)
        if x0.shape[0] != B:
            raise BatchSizeError(f"batch of {x0.shape[0]} rows for B={B}")
        cost = transport_cost(x0, x1)
    return Coupling(perm=perm, cost=cost, mode=CouplingMode.INDEPENDENT)


def _break_ties(perm: np.ndarray, cost_matrix: np.ndarray) -> None:
    """Exchange columns between rows i < k whenever that is cost-neutral and lowers perm[i]."""
    B = perm.size
    changed = True
    while changed:
        changed = False
        for i in range(B - 1):
            later = np.arange(i + 1, B)
            while True:
                cols = perm[later]
                lower = cols < perm[i]
                if not lower.any():
                    break
                current = cost_matrix[i, perm[i]] + cost_matrix[later, cols]
                exchanged = cost_matrix[i, cols] + cost_matrix[later, perm[i]]
                tied = lower & np.isclose(exchanged, current, rtol=TIE_TOLERANCE, atol=TIE_TOLERANCE)
                if not tied.any():
                    break
                k = later[tied][np.argmin(cols[tied])]
                perm[i], perm[k] = perm[k], perm[i]
                changed = True


def minibatch_ot(x0: np.ndarray, x1: np.ndarray, max_batch: Optional[int] = None) -> Coupling:
    """
    Exact squared-Euclidean assignment between two minibatches.

    Solved with the Hungarian method on the B x B cost matrix. Among equal-cost
    assignments, any two rows whose columns can be exchanged at no cost are
    given in ascending column order, so duplicated points pair by lowest index.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    _check_batches(x0, x1)
    bound = settings.OT_MAX_BATCH if max_batch is None else max_batch
    B = x0.shape[0]
    if B > bound:
        raise BatchSizeError(f"batch of {B} exceeds the exact OT solver bound {bound}")

    cost_matrix = cdist(x0, x1, metric="sqeuclidean")
    rows, cols = linear_sum_assignment(cost_matrix)
    perm = np.empty(B, dtype=np.int64)
    perm[rows] = cols
    _break_ties(perm, cost_matrix)
    return Coupling(perm=perm, cost=transport_cost(x0, x1, perm), mode=CouplingMode.OT)
