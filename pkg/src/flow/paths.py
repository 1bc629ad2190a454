"""
Conditional Gaussian bridge between a noise sample and a data sample.

p_t(x | x0, x1) = N(t*x1 + (1-t)*x0, sigma_t^2 I) with sigma_t = sigma0*sqrt(t(1-t)).
Every function accepts a single vector or a batch of row vectors; ``t`` may be
a scalar or one value per row.
"""

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from src.core.errors import DimensionMismatchError, DomainError, SingularityError, ZeroBandwidthError
from src.data.models import PathConfig

TimeLike = Union[float, np.ndarray]


@dataclass
class BridgeSample:
    """One (or a batch of) draws from the conditional path."""
    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    xt: np.ndarray
    mu_t: np.ndarray
    sigma_t: np.ndarray
    eps0: np.ndarray

    @property
    def batch_size(self) -> int:
        return 1 if self.xt.ndim == 1 else int(self.xt.shape[0])


def _column(t: TimeLike, ndim: int) -> np.ndarray:
    """Broadcast per-row times against (B, d) arrays."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1 and ndim == 2:
        return t[:, None]
    return t


def sigma_schedule(t: TimeLike, cfg: PathConfig) -> TimeLike:
    """sigma0 * sqrt(t (1 - t)); zero at both endpoints."""
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"t must lie in [0, 1], got {t}")
    sigma = cfg.sigma0 * np.sqrt(arr * (1.0 - arr))
    return float(sigma) if sigma.ndim == 0 else sigma


def clamp_time(t: TimeLike, cfg: PathConfig) -> TimeLike:
    eps = cfg.t_clamp_eps
    clamped = np.clip(np.asarray(t, dtype=np.float64), eps, 1.0 - eps)
    return float(clamped) if clamped.ndim == 0 else clamped


def sample_bridge(
    x0: np.ndarray,
    x1: np.ndarray,
    t: TimeLike,
    cfg: PathConfig,
    rng: Optional[np.random.Generator] = None,
    clamp: bool = True,
    eps0: Optional[np.ndarray] = None,
) -> BridgeSample:
    """
    Draw x_t from the bridge between ``x0`` and ``x1``.

    ``t`` is clamped to [eps, 1 - eps] unless ``clamp`` is off. The standard
    normal ``eps0`` is drawn from ``rng`` unless supplied.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise DimensionMismatchError(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t_arr = np.asarray(clamp_time(t, cfg) if clamp else t, dtype=np.float64)
    if x0.ndim == 2 and t_arr.ndim == 0:
        t_arr = np.full(x0.shape[0], float(t_arr))
    sigma_t = np.asarray(sigma_schedule(t_arr, cfg), dtype=np.float64)

    if eps0 is None:
        if rng is None:
            raise ValueError("either rng or eps0 is required")
        eps0 = rng.standard_normal(x0.shape)
    eps0 = np.asarray(eps0, dtype=np.float64)
    if eps0.shape != x0.shape:
        raise DimensionMismatchError(f"eps0 {eps0.shape} does not match x0 {x0.shape}")

    tc = _column(t_arr, x0.ndim)
    sc = _column(sigma_t, x0.ndim)
    mu_t = tc * x1 + (1.0 - tc) * x0
    xt = mu_t + sc * eps0
    return BridgeSample(x0=x0, x1=x1, t=t_arr, xt=xt, mu_t=mu_t, sigma_t=sigma_t, eps0=eps0)


def conditional_velocity(xt: np.ndarray, x1: np.ndarray, t: TimeLike, eps: float = 1e-3) -> np.ndarray:
    """(x1 - xt) / (1 - t)."""
    xt = np.asarray(xt, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if xt.shape != x1.shape:
        raise DimensionMismatchError(f"xt {xt.shape} and x1 {x1.shape} differ")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr > 1.0 - eps):
        raise SingularityError(f"conditional velocity is singular at t={t}; clamp t to <= {1.0 - eps}")
    return (x1 - xt) / (1.0 - _column(t_arr, xt.ndim))


def _check_bandwidth(sigma_t: TimeLike) -> np.ndarray:
    sigma = np.asarray(sigma_t, dtype=np.float64)
    if np.any(sigma <= 0.0):
        raise ZeroBandwidthError(f"sigma_t must be positive, got {sigma_t}")
    return sigma


def conditional_score(xt: np.ndarray, mu_t: np.ndarray, sigma_t: TimeLike) -> np.ndarray:
    """Gradient of log N(xt; mu_t, sigma_t^2 I): -(xt - mu_t) / sigma_t^2."""
    sigma = _check_bandwidth(sigma_t)
    xt = np.asarray(xt, dtype=np.float64)
    mu_t = np.asarray(mu_t, dtype=np.float64)
    if xt.shape != mu_t.shape:
        raise DimensionMismatchError(f"xt {xt.shape} and mu_t {mu_t.shape} differ")
    sc = _column(sigma, xt.ndim)
    return -(xt - mu_t) / (sc * sc)


def conditional_score_order2(sigma_t: float, dim: int) -> np.ndarray:
    """Diagonal of the Gaussian log-density Hessian, -1/sigma_t^2 per entry."""
    sigma = float(_check_bandwidth(sigma_t))
    return np.full(dim, -1.0 / (sigma * sigma))


def conditional_score_orderk(k: int, dim: int) -> np.ndarray:
    """Derivatives of order three and above vanish for a Gaussian log-density."""
    if k < 3:
        raise DomainError(f"order must be >= 3, got {k}")
    return np.zeros(dim)


def gaussian_log_density(x: np.ndarray, mean: np.ndarray, std: float) -> float:
    """log N(x; mean, std^2 I) for one vector."""
    x = np.asarray(x, dtype=np.float64)
    diff = x - np.asarray(mean, dtype=np.float64)
    d = x.shape[-1]
    return float(-0.5 * np.dot(diff, diff) / std**2 - d * np.log(std) - 0.5 * d * np.log(2.0 * np.pi))
