"""
Drift assembly, Euler-Maruyama generation and likelihood evaluation.

The sampler drift is

    w = g0 (x1_hat - x) / (1 - t) + ((2 g1 - sigma_t^2) / 2) s1 + sum_{k>=2} gk sk

where s_k are the derivative estimates recovered from the network heads and
g_k = c[k] sigma_t^2 come from the ``GammaSchedule``. With the marginal velocity
mode the first term also carries sigma0^2 / (2 sigma_t) times the order-1 head,
which turns the denoiser velocity into the marginal velocity of the noisy bridge.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Protocol, Tuple, Union, runtime_checkable

import numpy as np

from src.config.settings import settings
from src.core.errors import (
    ConfigurationError,
    DimensionMismatchError,
    DivergenceError,
    NonFiniteError,
    OrderMismatchError,
    SingularityError,
)
from src.core.rng import make_rng
from src.data.models import DivergenceMode, GammaSchedule, PathConfig, SampleRun, VelocityMode
from src.flow.network import HeadOutputs, StepLike, score_from_heads
from src.flow.paths import gaussian_log_density, sigma_schedule
from src.utils.logging import get_logger

logger = get_logger(__name__)

DriftFn = Callable[[np.ndarray, float], np.ndarray]


@runtime_checkable
class HeadModel(Protocol):
    """Anything that produces IDFF head outputs."""

    @property
    def K(self) -> int: ...

    @property
    def data_dim(self) -> int: ...

    @property
    def n_steps(self) -> Optional[int]: ...

    @property
    def path(self) -> PathConfig: ...

    def predict(self, xt: np.ndarray, t: Union[float, np.ndarray], n: StepLike = None) -> HeadOutputs: ...


class GaussianPointOracle:
    """
    Exact heads for a dataset holding the single point ``x1``.

    With x0 ~ N(0, I) the marginal at time t is N(t x1, s_t^2 I) where
    s_t^2 = (1 - t)^2 + sigma0^2 t (1 - t). The oracle returns x1_hat = x1 and
    the standardized marginal derivatives in place of trained heads.
    """

    def __init__(self, x1: np.ndarray, path: PathConfig, K: int = 1):
        self.x1 = np.asarray(x1, dtype=np.float64)
        self.path = path
        self._K = K

    @property
    def K(self) -> int:
        return self._K

    @property
    def data_dim(self) -> int:
        return int(self.x1.shape[-1])

    @property
    def n_steps(self) -> Optional[int]:
        return None

    def marginal_variance(self, t: float) -> float:
        return (1.0 - t) ** 2 + self.path.sigma0**2 * t * (1.0 - t)

    def predict(self, xt: np.ndarray, t: Union[float, np.ndarray], n: StepLike = None) -> HeadOutputs:
        xt = np.asarray(xt, dtype=np.float64)
        t = float(t)
        sigma = float(sigma_schedule(t, self.path))
        var = self.marginal_variance(t)
        score = -(xt - t * self.x1) / var
        n_hat: List[np.ndarray] = []
        for order in range(1, self._K + 1):
            if order == 1:
                n_hat.append(-sigma * score)
            elif order == 2:
                n_hat.append(np.full_like(xt, sigma * sigma / var))
            else:
                n_hat.append(np.zeros_like(xt))
        return HeadOutputs(x1_hat=np.broadcast_to(self.x1, xt.shape).copy(), n_hat=n_hat)


@dataclass
class SampleResult:
    """Final samples and, optionally, the whole trajectory (B, nfe+1, d)."""
    samples: np.ndarray
    trajectory: Optional[np.ndarray] = None


@dataclass
class LikelihoodResult:
    """Log-density at the query points and its parts."""
    log_prob: np.ndarray
    log_p0: np.ndarray
    divergence: np.ndarray
    std_error: np.ndarray
    x0: np.ndarray


def assemble_drift(
    xt: np.ndarray,
    t: float,
    model: HeadModel,
    gamma: GammaSchedule,
    cfg: PathConfig,
    n: StepLike = None,
) -> np.ndarray:
    """Evaluate the momentum-augmented drift at (xt, t)."""
    if t > 1.0 - cfg.t_clamp_eps:
        raise SingularityError(f"drift evaluated at t={t}; must be <= {1.0 - cfg.t_clamp_eps}")
    marginal = gamma.velocity is VelocityMode.MARGINAL
    if gamma.K > model.K:
        raise OrderMismatchError(f"gamma schedule has order {gamma.K} but the model only {model.K} heads")
    if marginal and model.K < 1:
        raise OrderMismatchError("the marginal velocity needs an order-1 head")

    out = model.predict(xt, t, n)
    sigma = float(sigma_schedule(t, cfg))
    velocity = (out.x1_hat - xt) / (1.0 - t)
    if marginal and sigma > 0.0:
        velocity = velocity + cfg.sigma0**2 / (2.0 * sigma) * out.n_hat[0]
    drift = gamma.gamma0(sigma) * velocity
    # Every momentum coefficient carries a sigma_t^2 factor and vanishes at t = 0.
    if sigma > 0.0 and gamma.K > 0:
        estimates = score_from_heads(HeadOutputs(out.x1_hat, out.n_hat[: gamma.K]), sigma)
        drift = drift + gamma.score_coefficient(sigma) * estimates[0]
        for coefficient, estimate in zip(gamma.momentum(sigma)[1:], estimates[1:]):
            drift = drift + coefficient * estimate
    return drift


def _model_step(model: HeadModel, n: int) -> Optional[int]:
    """Step index passed to the model; indices beyond its range wrap cyclically."""
    N = model.n_steps
    if N is None:
        return None
    return (n - 1) % N + 1


def _integrate(
    model: HeadModel,
    gamma: GammaSchedule,
    run: SampleRun,
    x0: np.ndarray,
    rng: np.random.Generator,
    cfg: PathConfig,
    n: Optional[int] = None,
) -> SampleResult:
    dt = run.dt
    t_max = 1.0 - cfg.t_clamp_eps
    x = x0.copy()
    trajectory = [x.copy()] if run.store_trajectory else None

    for step in range(run.nfe):
        t = step * dt
        drift = assemble_drift(x, min(t, t_max), model, gamma, cfg, n)
        x = x + drift * dt
        last = step == run.nfe - 1
        if not run.deterministic and not (last and run.final_step_deterministic):
            sigma = float(sigma_schedule(t, cfg))
            x = x + sigma * np.sqrt(dt) * rng.standard_normal(x.shape)
        if not np.all(np.isfinite(x)):
            logger.error(f"non-finite sampler state at step {step}")
            raise NonFiniteError(f"sampler state became non-finite at step {step} (t={t:.4f})")
        if trajectory is not None:
            trajectory.append(x.copy())

    return SampleResult(samples=x, trajectory=None if trajectory is None else np.stack(trajectory, axis=1))


def generate(
    model: HeadModel,
    gamma: GammaSchedule,
    run: SampleRun,
    B: int,
    cfg: Optional[PathConfig] = None,
) -> SampleResult:
    """Draw ``B`` samples by Euler-Maruyama from x0 ~ N(0, I)."""
    if B < 1:
        raise ConfigurationError(f"number of samples must be >= 1, got {B}")
    cfg = cfg or model.path
    rng = make_rng(run.seed)
    x0 = rng.standard_normal((B, model.data_dim))
    logger.debug(f"Generating {B} samples with nfe={run.nfe}, gamma c={gamma.c} ({gamma.gamma0_mode.value})")
    return _integrate(model, gamma, run, x0, rng, cfg, _model_step(model, 1))


def generate_timeseries(
    model: HeadModel,
    gamma: GammaSchedule,
    run: SampleRun,
    N: int,
    x_init: Optional[np.ndarray] = None,
    B: int = 1,
    cfg: Optional[PathConfig] = None,
) -> np.ndarray:
    """
    Generate ``N`` consecutive steps for ``B`` sequences; returns (B, N, d).

    Step 1 starts from N(0, I), or from N(x_init, sigma0^2 I) when an initial
    state is given; every later step starts from N(previous step, sigma0^2 I).
    """
    if N < 1:
        raise ConfigurationError(f"sequence length must be >= 1, got {N}")
    cfg = cfg or model.path
    rng = make_rng(run.seed)
    d = model.data_dim
    if x_init is not None:
        x_init = np.atleast_2d(np.asarray(x_init, dtype=np.float64))
        if x_init.shape[1] != d:
            raise DimensionMismatchError(f"x_init has dimension {x_init.shape[1]}, model expects {d}")
        B = x_init.shape[0]

    steps: List[np.ndarray] = []
    previous = x_init
    for n in range(1, N + 1):
        if previous is None:
            x0 = rng.standard_normal((B, d))
        else:
            x0 = previous + cfg.sigma0 * rng.standard_normal((B, d))
        result = _integrate(model, gamma, run, x0, rng, cfg, _model_step(model, n))
        previous = result.samples
        steps.append(previous)
    return np.stack(steps, axis=1)


def _divergence(
    drift_fn: DriftFn,
    x: np.ndarray,
    t: float,
    mode: DivergenceMode,
    rng: np.random.Generator,
    probes: int,
    h: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Divergence of the drift at each row of ``x`` and its Monte-Carlo variance."""
    B, d = x.shape
    if mode is DivergenceMode.EXACT_FD:
        div = np.zeros(B)
        for j in range(d):
            offset = np.zeros(d)
            offset[j] = h
            div += (drift_fn(x + offset, t)[:, j] - drift_fn(x - offset, t)[:, j]) / (2.0 * h)
        return div, np.zeros(B)

    estimates = np.empty((probes, B))
    for p in range(probes):
        z = rng.choice(np.array([-1.0, 1.0]), size=(B, d))
        jvp = (drift_fn(x + h * z, t) - drift_fn(x - h * z, t)) / (2.0 * h)
        estimates[p] = np.sum(z * jvp, axis=1)
    variance = estimates.var(axis=0, ddof=1) / probes if probes > 1 else np.zeros(B)
    return estimates.mean(axis=0), variance


def integrate_log_density(
    drift_fn: DriftFn,
    x1: np.ndarray,
    t_start: float,
    nfe: int,
    div_mode: Union[str, DivergenceMode] = DivergenceMode.EXACT_FD,
    rng: Optional[np.random.Generator] = None,
    probes: int = 8,
    h: float = 1e-4,
) -> LikelihoodResult:
    """
    Integrate the drift ODE backward from ``t_start`` to 0 and accumulate its divergence.

    log p_1(x1) = log N(x_0; 0, I) - integral of div w dt, with the integral
    taken by the trapezoidal rule on ``nfe`` Euler steps.
    """
    mode = DivergenceMode(div_mode)
    if mode is DivergenceMode.HUTCHINSON and probes < 1:
        raise ConfigurationError("hutchinson divergence needs at least one probe")
    rng = rng or make_rng(0)
    x = np.atleast_2d(np.asarray(x1, dtype=np.float64)).copy()
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("likelihood query contains NaN or Inf")

    dt = t_start / nfe
    t = t_start
    div_prev, var_prev = _divergence(drift_fn, x, t, mode, rng, probes, h)
    accumulated = np.zeros(x.shape[0])
    # trapezoid weights: dt/2 at both ends, dt inside; probes are independent across nodes
    variance = (0.5 * dt) ** 2 * var_prev
    for step in range(nfe):
        x = x - dt * drift_fn(x, t)
        t = t_start - (step + 1) * dt
        if not np.all(np.isfinite(x)) or np.any(np.linalg.norm(x, axis=1) > settings.STATE_NORM_LIMIT):
            logger.error(f"backward likelihood integration blew up at step {step}")
            raise DivergenceError(f"backward integration exceeded the state norm limit at step {step}")
        div_next, var_next = _divergence(drift_fn, x, max(t, 0.0), mode, rng, probes, h)
        if not (np.all(np.isfinite(div_prev)) and np.all(np.isfinite(div_next))):
            raise NonFiniteError(f"non-finite divergence at step {step}")
        accumulated += 0.5 * dt * (div_prev + div_next)
        weight = 0.5 * dt if step == nfe - 1 else dt
        variance += weight**2 * var_next
        div_prev = div_next

    log_p0 = np.array([gaussian_log_density(row, np.zeros_like(row), 1.0) for row in x])
    return LikelihoodResult(
        log_prob=log_p0 - accumulated,
        log_p0=log_p0,
        divergence=accumulated,
        std_error=np.sqrt(variance),
        x0=x,
    )


def log_likelihood(
    model: HeadModel,
    gamma: GammaSchedule,
    x1: np.ndarray,
    nfe: int,
    div_mode: Union[str, DivergenceMode] = DivergenceMode.EXACT_FD,
    rng: Optional[np.random.Generator] = None,
    cfg: Optional[PathConfig] = None,
    probes: int = 8,
    n: StepLike = None,
) -> LikelihoodResult:
    """Log-density of the generative model at one point or a batch of points."""
    if nfe < 10:
        raise ConfigurationError(f"likelihood integration needs nfe >= 10, got {nfe}")
    cfg = cfg or model.path

    def drift_fn(x: np.ndarray, t: float) -> np.ndarray:
        return assemble_drift(x, t, model, gamma, cfg, n)  # type: ignore[arg-type]

    return integrate_log_density(drift_fn, x1, 1.0 - cfg.t_clamp_eps, nfe, div_mode, rng, probes)
