"""
IDFF objective and training loops.

The loss never sees the gamma schedule: the denoiser term is the
beta(t)^2-weighted squared error of x1_hat and every derivative head regresses
its standardized target (eps0 for order 1, ones for order 2, zeros above).
Any gamma can therefore be chosen at sampling time with the same model.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.config.settings import settings
from src.core.errors import (
    ConfigurationError,
    DimensionMismatchError,
    DivergenceError,
    NonFiniteError,
    OrderMismatchError,
    SingularityError,
)
from src.core.optim import AdamState, adam_step
from src.core.rng import spawn
from src.core.tensor import Graph, backward_grad, forward_eval
from src.data.models import LossBreakdown, TimeStrategy, TrainConfig
from src.flow.coupling import independent_coupling, minibatch_ot
from src.flow.network import HeadOutputs, IDFFNet
from src.flow.paths import BridgeSample, clamp_time, sample_bridge
from src.utils.logging import get_logger

logger = get_logger(__name__)

TIME_STRATEGY_FORMULAS: Dict[str, str] = {
    TimeStrategy.LINEAR.value: "t = u",
    TimeStrategy.LOGARITHMIC.value: "t = ln(1 + (e - 1) u)",
    TimeStrategy.BETA.value: "t = sqrt(u)  (Beta(2, 1) by inverse CDF)",
    TimeStrategy.COSINE.value: "t = sin(pi u / 2)",
}

# (x0, x1, step indices or None, coupling costs)
Pairs = Tuple[np.ndarray, np.ndarray, Optional[np.ndarray], Dict[str, float]]
PairDraw = Callable[[np.random.Generator], Pairs]


def beta_weight(t: Union[float, np.ndarray], eps: float = 1e-3) -> Union[float, np.ndarray]:
    """Denoiser weight 1 / (1 - t)."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr > 1.0 - eps):
        raise SingularityError(f"beta(t) is singular at t={t}; clamp t to <= {1.0 - eps}")
    weight = 1.0 / (1.0 - t_arr)
    return float(weight) if weight.ndim == 0 else weight


def _strategy(strategy: Union[str, TimeStrategy]) -> TimeStrategy:
    try:
        return TimeStrategy(strategy)
    except ValueError:
        raise ConfigurationError(
            f"unknown time strategy '{strategy}'; expected one of {sorted(TIME_STRATEGY_FORMULAS)}"
        ) from None


def time_map(strategy: Union[str, TimeStrategy], u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Map uniform variates in [0, 1] to training times."""
    kind = _strategy(strategy)
    u_arr = np.asarray(u, dtype=np.float64)
    if kind is TimeStrategy.LINEAR:
        t = u_arr
    elif kind is TimeStrategy.LOGARITHMIC:
        t = np.log1p((math.e - 1.0) * u_arr)
    elif kind is TimeStrategy.BETA:
        t = np.sqrt(u_arr)
    else:
        t = np.sin(0.5 * np.pi * u_arr)
    return float(t) if t.ndim == 0 else t


def sample_time(
    strategy: Union[str, TimeStrategy], rng: np.random.Generator, size: Optional[int] = None
) -> Union[float, np.ndarray]:
    """Draw training times under ``strategy``."""
    kind = _strategy(strategy)
    return time_map(kind, rng.random(size))


def standardized_targets(sample: BridgeSample, K: int) -> List[np.ndarray]:
    """Regression targets of the K noise heads for ``sample``."""
    targets: List[np.ndarray] = []
    for order in range(1, K + 1):
        if order == 1:
            targets.append(sample.eps0)
        elif order == 2:
            targets.append(np.ones_like(sample.eps0))
        else:
            targets.append(np.zeros_like(sample.eps0))
    return targets


def loss_from_heads(out: HeadOutputs, sample: BridgeSample, K: int, eps: float = 1e-3) -> LossBreakdown:
    """LossBreakdown of head outputs against a (batched) bridge sample."""
    if out.K != K:
        raise OrderMismatchError(f"heads have order {out.K}, loss expects {K}")
    x1_hat = np.atleast_2d(out.x1_hat)
    x1 = np.atleast_2d(sample.x1)
    t = np.atleast_1d(sample.t)
    weight = np.asarray(beta_weight(t, eps), dtype=np.float64) ** 2

    per_sample = weight * np.sum((x1_hat - x1) ** 2, axis=1)
    bad = ~np.isfinite(per_sample)
    if np.any(bad):
        raise NonFiniteError(f"non-finite denoiser loss at t={float(t[np.argmax(bad)])}")
    denoiser = float(np.mean(per_sample))

    per_order: List[float] = []
    for n_hat, target in zip(out.n_hat, standardized_targets(sample, K)):
        residual = np.sum((np.atleast_2d(n_hat) - np.atleast_2d(target)) ** 2, axis=1)
        bad = ~np.isfinite(residual)
        if np.any(bad):
            raise NonFiniteError(f"non-finite head loss at t={float(t[np.argmax(bad)])}")
        per_order.append(float(np.mean(residual)))
    return LossBreakdown.from_terms(denoiser, per_order)


def idff_loss(
    sample: BridgeSample, model: IDFFNet, K: int, n: Optional[Union[int, np.ndarray]] = None
) -> LossBreakdown:
    """Evaluate the IDFF objective of ``model`` on a batch of bridge samples."""
    if model.K != K:
        raise OrderMismatchError(f"model has {model.K} heads, loss expects K={K}")
    out = model.forward(sample.xt, sample.t, n)
    return loss_from_heads(out, sample, K)


@dataclass
class TrainResult:
    """Trained model and its per-iteration loss trace."""
    model: IDFFNet
    trace: List[LossBreakdown] = field(default_factory=list)
    config: Optional[TrainConfig] = None

    @property
    def final(self) -> Optional[LossBreakdown]:
        return self.trace[-1] if self.trace else None


class LossGraph:
    """The training objective as one reusable differentiable graph."""

    def __init__(self, model: IDFFNet, eps: float = 1e-3):
        self.model = model
        self.eps = eps
        self.graph = Graph()
        self.nodes = model.build(self.graph)
        g = self.graph

        x1 = g.input("x1")
        beta_sq = g.input("beta_sq")
        residual = g.sum(g.square(g.sub(self.nodes.x1_hat, x1)), axis=1, keepdims=True)
        self.denoiser = g.mean(g.mul(residual, beta_sq))

        self.orders: List[int] = []
        total = self.denoiser
        for order, head in enumerate(self.nodes.heads, start=1):
            target = g.input(f"target{order}")
            term = g.mean(g.sum(g.square(g.sub(head, target)), axis=1))
            self.orders.append(term)
            total = g.add(total, term)
        self.total = total
        g.set_output(total)

    def step(self, sample: BridgeSample, n: Optional[np.ndarray] = None) -> LossBreakdown:
        """Forward and backward on one batch; gradients land on the model parameters."""
        feed, _ = self.model.encode_inputs(sample.xt, sample.t, n)
        inputs: Dict[str, object] = dict(feed)
        inputs["x1"] = sample.x1
        inputs["beta_sq"] = (np.asarray(beta_weight(sample.t, self.eps)) ** 2)[:, None]
        for order, target in enumerate(standardized_targets(sample, self.model.K), start=1):
            inputs[f"target{order}"] = target
        inputs.update(self.model.params)

        forward_eval(self.graph, inputs)  # type: ignore[arg-type]
        backward_grad(self.graph)
        denoiser = float(self.graph.value(self.denoiser))
        per_order = [float(self.graph.value(node)) for node in self.orders]
        return LossBreakdown.from_terms(denoiser, per_order)


def _guard(loss: LossBreakdown, iteration: int) -> None:
    if not math.isfinite(loss.total) or loss.total > settings.DIVERGENCE_THRESHOLD:
        raise DivergenceError(
            f"training diverged at iteration {iteration}: loss {loss.total:.6g} "
            f"exceeds {settings.DIVERGENCE_THRESHOLD:.3g}"
        )


def _optimize(
    model: IDFFNet,
    config: TrainConfig,
    rng: np.random.Generator,
    draw_pairs: PairDraw,
    label: str,
) -> List[LossBreakdown]:
    """Shared loop body: draw pairs, sample the bridge, take an Adam step."""
    loss_graph = LossGraph(model, config.path.t_clamp_eps)
    state = AdamState(lr=config.lr)
    trace: List[LossBreakdown] = []
    B = config.batch_size

    for iteration in range(1, config.iters + 1):
        x0, x1, n, costs = draw_pairs(rng)
        t = clamp_time(sample_time(config.time_strategy, rng, B), config.path)
        eps0 = rng.standard_normal(x0.shape)
        sample = sample_bridge(x0, x1, t, config.path, eps0=eps0, clamp=False)

        try:
            loss = loss_graph.step(sample, n)
        except NonFiniteError as e:
            logger.error(f"{label}: non-finite values at iteration {iteration}: {e}")
            raise DivergenceError(f"training diverged at iteration {iteration}: {e}") from e
        if costs:
            loss = LossBreakdown(**{**loss.model_dump(), **costs})
        try:
            _guard(loss, iteration)
        except DivergenceError as e:
            logger.error(f"{label}: {e}")
            raise

        grads = {name: model.params[name].grad for name in model.params}
        adam_step(model.params, grads, state)  # type: ignore[arg-type]
        trace.append(loss)

        logger.debug(f"{label} iter {iteration}: total={loss.total:.6f}")
        if iteration % config.log_every == 0 or iteration == config.iters:
            logger.info(
                f"{label} iter {iteration}/{config.iters}: total={loss.total:.5f} "
                f"denoiser={loss.denoiser:.5f} orders={[round(v, 5) for v in loss.per_order]}"
            )

    if trace:
        logger.info(f"{label} finished: first loss {trace[0].total:.5f}, last loss {trace[-1].total:.5f}")
    return trace


def train_static(data: np.ndarray, config: TrainConfig) -> TrainResult:
    """
    Train an IDFF model on i.i.d. data rows.

    Each iteration draws a data batch and standard normal noise, optionally
    re-pairs them by minibatch OT, samples times and the bridge, and takes one
    Adam step on the IDFF loss.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise DimensionMismatchError(f"training data must be a non-empty (M, d) array, got {data.shape}")
    M, d = data.shape
    init_rng, loop_rng = spawn(config.seed, 2)
    model = IDFFNet(config.model_config_for(d), init_rng, path=config.path)
    B = config.batch_size

    def draw_pairs(rng: np.random.Generator) -> Pairs:
        x1 = data[rng.integers(0, M, B)]
        x0 = rng.standard_normal((B, d))
        costs: Dict[str, float] = {}
        if config.use_ot:
            identity = independent_coupling(B, x0, x1)
            coupling = minibatch_ot(x0, x1)
            x0, x1 = coupling.apply(x0, x1)
            costs = {"coupling_cost": coupling.cost, "independent_cost": identity.cost}
        return x0, x1, None, costs

    logger.info(f"Training static IDFF model: M={M}, d={d}, K={config.K}, iters={config.iters}")
    trace = _optimize(model, config, loop_rng, draw_pairs, "train_static")
    return TrainResult(model=model, trace=trace, config=config)


def train_timeseries(windows: np.ndarray, config: TrainConfig, N: Optional[int] = None) -> TrainResult:
    """
    Train a step-conditioned IDFF model on trajectory windows.

    ``windows`` has shape (W, N+1, d). Each batch element draws a window and a
    step n uniformly from 1..N and bridges x^{n-1} to x^n of that window.
    With N == 1 this is exactly ``train_static`` on the final states.
    """
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[1] < 2 or windows.shape[0] < 1:
        raise DimensionMismatchError(
            f"trajectory windows must have shape (W, N+1, d) with N >= 1, got {windows.shape}"
        )
    W, length, d = windows.shape
    N = length - 1 if N is None else N
    if N != length - 1:
        raise DimensionMismatchError(f"windows hold {length - 1} steps, N={N} requested")
    if N == 1:
        return train_static(windows[:, -1], config)
    if config.use_ot:
        raise ConfigurationError("minibatch OT re-pairing is not defined for time-series pairs")

    init_rng, loop_rng = spawn(config.seed, 2)
    model = IDFFNet(config.model_config_for(d, n_embed=N), init_rng, path=config.path)
    B = config.batch_size

    def draw_pairs(rng: np.random.Generator) -> Pairs:
        w = rng.integers(0, W, B)
        n = rng.integers(1, N + 1, B)
        return windows[w, n - 1], windows[w, n], n, {}

    logger.info(f"Training time-series IDFF model: W={W}, N={N}, d={d}, K={config.K}, iters={config.iters}")
    trace = _optimize(model, config, loop_rng, draw_pairs, "train_timeseries")
    return TrainResult(model=model, trace=trace, config=config)


def trace_frame(trace: List[LossBreakdown]) -> pd.DataFrame:
    """Loss trace as a table: iter, total, denoiser, order1.. and coupling costs when present."""
    rows = []
    for iteration, loss in enumerate(trace, start=1):
        row: Dict[str, float] = {"iter": iteration, "total": loss.total, "denoiser": loss.denoiser}
        for order, value in enumerate(loss.per_order, start=1):
            row[f"order{order}"] = value
        if loss.coupling_cost is not None:
            row["coupling_cost"] = loss.coupling_cost
            row["independent_cost"] = float(loss.independent_cost or 0.0)
        rows.append(row)
    frame = pd.DataFrame(rows)
    if frame.empty:
        frame = pd.DataFrame(columns=["iter", "total", "denoiser"])
    return frame


def write_trace(trace: List[LossBreakdown], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trace_frame(trace).to_csv(path, index=False, float_format="%.17g")
    return path

