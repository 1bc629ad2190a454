"""
Scripted reproductions.

Each pipeline trains a set of arms under one shared ``ExperimentBudget``,
evaluates them over several seeds and returns an ``ExperimentReport``. When
``out_dir`` is given the report directory (tables, snapshot, traces and
figures) is written as well.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from src.core.errors import ConfigurationError, DivergenceError
from src.core.rng import spawn
from src.data.checkpoint import model_from_checkpoint
from src.data.datasets import (
    Dataset,
    gen_toy2d,
    integrate_attractor,
    make_attractor_windows,
    standardize,
    subsample,
)
from src.data.models import (
    AttractorConfig,
    AttractorKind,
    Checkpoint,
    ExperimentBudget,
    ExperimentReport,
    GammaSchedule,
    LossBreakdown,
    ReportRow,
    SampleRun,
    TimeStrategy,
    ToyName,
)
from src.evaluation.metrics import mmd2_rbf, trajectory_scores
from src.experiments.reports import write_report
from src.flow.network import IDFFNet
from src.flow.sampling import generate, generate_timeseries
from src.flow.training import TIME_STRATEGY_FORMULAS, TrainResult, train_static, train_timeseries
from src.utils.logging import get_logger
from src.utils.svg import line_svg, scatter_svg

logger = get_logger(__name__)

T = TypeVar("T")

DATA_STREAM = 0x1DFF
DEFAULT_NFE_LIST = (2, 5, 6, 8, 10)
TOY = ToyName.EIGHT_GAUSSIANS
OVERLAY_PATHS = 32


@dataclass
class Arm:
    """One configuration compared inside an experiment."""
    name: str
    K: int
    gamma: GammaSchedule
    deterministic: bool = False
    overrides: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ArmOutcome:
    arm: str
    seed: int
    metrics: Dict[str, float]
    trace: List[LossBreakdown] = field(default_factory=list)
    samples: Optional[np.ndarray] = None
    trajectories: Optional[np.ndarray] = None
    failed: bool = False


@dataclass
class _Collected:
    """Everything a report directory needs besides the report itself."""
    traces: Dict[str, List[LossBreakdown]] = field(default_factory=dict)
    figures: Dict[str, str] = field(default_factory=dict)


def _data_streams(seed: int, n: int) -> List[np.random.Generator]:
    """Generators for data draws, kept apart from the training streams of ``seed``."""
    return spawn(np.random.SeedSequence([DATA_STREAM, seed]), n)


def _toy_data(seed: int, budget: ExperimentBudget) -> Tuple[np.ndarray, np.ndarray]:
    train_rng, ref_rng = _data_streams(seed, 2)
    train = gen_toy2d(TOY, budget.n_train, train_rng).rows
    reference = gen_toy2d(TOY, budget.n_eval, ref_rng).rows
    return train, reference


def _run_tasks(tasks: Sequence[Callable[[], T]], threads: int) -> List[T]:
    """Run independent tasks, returning results in task order."""
    if threads <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(task) for task in tasks]
        return [future.result() for future in futures]


def _check_seeds(seeds: Sequence[int], minimum: int) -> List[int]:
    seeds = [int(s) for s in seeds]
    if len(seeds) < minimum:
        raise ConfigurationError(f"this experiment needs at least {minimum} seeds, got {len(seeds)}")
    return seeds


def _median(values: List[float]) -> float:
    finite = [v for v in values if np.isfinite(v)]
    return float(np.median(finite)) if finite else float("nan")


def _assemble(
    name: str,
    config: Dict[str, Any],
    outcomes: List[ArmOutcome],
    notes: List[str],
    started: float,
) -> ExperimentReport:
    rows: List[ReportRow] = []
    per_arm: Dict[str, Dict[str, List[float]]] = {}
    seeds: Dict[str, List[int]] = {}
    failed: List[str] = []
    for outcome in outcomes:
        seeds.setdefault(outcome.arm, [])
        if outcome.seed not in seeds[outcome.arm]:
            seeds[outcome.arm].append(outcome.seed)
        if outcome.failed and outcome.arm not in failed:
            failed.append(outcome.arm)
        for metric, value in outcome.metrics.items():
            rows.append(ReportRow(arm=outcome.arm, seed=outcome.seed, metric=metric, value=value))
            per_arm.setdefault(outcome.arm, {}).setdefault(metric, []).append(value)

    arms = {arm: {metric: _median(values) for metric, values in metrics.items()} for arm, metrics in per_arm.items()}
    return ExperimentReport(
        name=name,
        config=config,
        rows=rows,
        arms=arms,
        seeds=seeds,
        notes=notes,
        failed_arms=failed,
        wall_time=time.perf_counter() - started,
    )


def _train_and_sample(
    arm: Arm,
    seed: int,
    budget: ExperimentBudget,
    nfe: int,
    train: np.ndarray,
    reference: np.ndarray,
) -> ArmOutcome:
    config = budget.train_config(arm.K, seed, **arm.overrides)
    try:
        result = train_static(train, config)
    except DivergenceError as e:
        logger.error(f"arm {arm.name} seed {seed} failed: {e}")
        return ArmOutcome(arm=arm.name, seed=seed, metrics={"mmd2": float("nan")}, failed=True)
    run = SampleRun(nfe=nfe, seed=seed, deterministic=arm.deterministic)
    samples = generate(result.model, arm.gamma, run, budget.n_eval, config.path).samples
    mmd = mmd2_rbf(samples, reference)
    logger.info(f"arm {arm.name} seed {seed}: mmd2={mmd.mmd2:.5f}")
    overlay = run.model_copy(update={"store_trajectory": True})
    paths = generate(result.model, arm.gamma, overlay, OVERLAY_PATHS, config.path).trajectory
    return ArmOutcome(
        arm=arm.name,
        seed=seed,
        metrics={"mmd2": mmd.mmd2},
        trace=result.trace,
        samples=samples,
        trajectories=paths,
    )


def _collect(outcomes: List[ArmOutcome], reference: Optional[np.ndarray], title: str) -> _Collected:
    collected = _Collected()
    for outcome in outcomes:
        if outcome.trace:
            collected.traces[f"{outcome.arm}_seed{outcome.seed}"] = outcome.trace
    first_seed = outcomes[0].seed if outcomes else None
    curves = {
        o.arm: (np.arange(1, len(o.trace) + 1), np.array([loss.total for loss in o.trace]))
        for o in outcomes
        if o.seed == first_seed and o.trace
    }
    if curves:
        collected.figures["loss_curves"] = line_svg(curves, title=f"{title}: training loss", log_y=True)
    for o in outcomes:
        if o.seed == first_seed and o.samples is not None and reference is not None:
            collected.figures[f"samples_{o.arm}"] = scatter_svg(
                {"reference": reference, o.arm: o.samples}, title=f"{title}: {o.arm}", trajectories=o.trajectories
            )
    return collected


def _finish(report: ExperimentReport, collected: _Collected, out_dir: Optional[Union[str, Path]]) -> ExperimentReport:
    if out_dir is not None:
        write_report(report, out_dir, traces=collected.traces, figures=collected.figures)
    return report


def _snapshot(name: str, budget: ExperimentBudget, seeds: List[int], arms: List[Arm], **extra: Any) -> Dict[str, Any]:
    return {
        "experiment": name,
        "dataset": TOY.value,
        "budget": budget.model_dump(mode="json"),
        "seeds": seeds,
        "arms": {
            arm.name: {
                "K": arm.K,
                "gamma": arm.gamma.model_dump(mode="json"),
                "deterministic": arm.deterministic,
                "overrides": {k: (v.value if isinstance(v, TimeStrategy) else v) for k, v in arm.overrides.items()},
            }
            for arm in arms
        },
        **extra,
    }


MMD_NOTE = "MMD^2 (median-heuristic RBF) on eight_gaussians stands in for FID on image data."


def order_comparison_arms() -> List[Arm]:
    return [
        Arm("K0_baseline", K=0, gamma=GammaSchedule(c=[]), deterministic=True),
        Arm("K1", K=1, gamma=GammaSchedule(c=[1.0])),
        Arm("K2", K=2, gamma=GammaSchedule(c=[1.0, 0.5])),
    ]


def run_order_comparison(
    seeds: Sequence[int],
    nfe: int = 2,
    budget: Optional[ExperimentBudget] = None,
    threads: int = 1,
    self_test: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentReport:
    """Compare the deterministic K=0 baseline with IDFF K=1 and K=2 at a small NFE."""
    started = time.perf_counter()
    budget = budget or ExperimentBudget()
    seeds = _check_seeds(seeds, 1 if self_test else 3)
    name = "order_comparison"

    if self_test:
        outcomes = []
        for seed in seeds:
            _, reference = _toy_data(seed, budget)
            mmd = mmd2_rbf(reference, reference)
            outcomes.append(ArmOutcome(arm="self_test", seed=seed, metrics={"mmd2": mmd.mmd2}))
        config = _snapshot(name, budget, seeds, [], nfe=nfe, self_test=True)
        report = _assemble(name, config, outcomes, [MMD_NOTE, "self-test: reference set against itself"], started)
        return _finish(report, _Collected(), out_dir)

    arms = order_comparison_arms()
    data = {seed: _toy_data(seed, budget) for seed in seeds}
    tasks = [
        (lambda arm=arm, seed=seed: _train_and_sample(arm, seed, budget, nfe, *data[seed]))
        for arm in arms
        for seed in seeds
    ]
    outcomes = _run_tasks(tasks, threads)

    config = _snapshot(name, budget, seeds, arms, nfe=nfe)
    report = _assemble(name, config, outcomes, [MMD_NOTE], started)
    med = {arm: report.arms[arm]["mmd2"] for arm in report.arms}
    report.checks = {
        "k2_le_k1": bool(med["K2"] <= med["K1"]),
        "k1_le_k0": bool(med["K1"] <= med["K0_baseline"]),
        "k2_below_0.05": bool(med["K2"] < 0.05),
    }
    return _finish(report, _collect(outcomes, data[seeds[0]][1], name), out_dir)


def run_coupling_ablation(
    seeds: Sequence[int],
    iters: Optional[int] = None,
    budget: Optional[ExperimentBudget] = None,
    nfe: int = 10,
    threads: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentReport:
    """Train identical K=2 models with and without minibatch OT re-pairing."""
    started = time.perf_counter()
    budget = budget or ExperimentBudget()
    if iters is not None:
        budget = budget.model_copy(update={"iters": iters})
    seeds = _check_seeds(seeds, 3)
    name = "coupling_ablation"
    gamma = GammaSchedule(c=[1.0, 0.5])
    arms = [
        Arm("independent", K=2, gamma=gamma, overrides={"use_ot": False}),
        Arm("ot", K=2, gamma=gamma, overrides={"use_ot": True}),
    ]
    data = {seed: _toy_data(seed, budget) for seed in seeds}
    tasks = [
        (lambda arm=arm, seed=seed: _train_and_sample(arm, seed, budget, nfe, *data[seed]))
        for arm in arms
        for seed in seeds
    ]
    outcomes = _run_tasks(tasks, threads)
    for outcome in outcomes:
        outcome.metrics["final_loss"] = outcome.trace[-1].total if outcome.trace else float("nan")

    config = _snapshot(name, budget, seeds, arms, nfe=nfe)
    report = _assemble(name, config, outcomes, [MMD_NOTE], started)

    ot_costs_ok = all(
        loss.coupling_cost is not None
        and loss.independent_cost is not None
        and loss.coupling_cost <= loss.independent_cost + 1e-9
        for o in outcomes
        if o.arm == "ot"
        for loss in o.trace
    )
    values = {arm: [o.metrics["mmd2"] for o in outcomes if o.arm == arm] for arm in ("independent", "ot")}
    variances = [np.var(v, ddof=1) for v in values.values() if len(v) > 1]
    spread = float(np.sqrt(np.mean(variances))) if variances else 0.0
    gap = abs(report.arms["ot"]["mmd2"] - report.arms["independent"]["mmd2"])
    report.checks = {
        "ot_cost_le_independent": bool(ot_costs_ok),
        "comparable_performance": bool(gap <= spread),
    }
    report.notes.append(f"median gap {gap:.6g} vs pooled inter-seed standard deviation {spread:.6g}")
    return _finish(report, _collect(outcomes, data[seeds[0]][1], name), out_dir)


def run_nfe_sweep(
    model: Union[IDFFNet, Checkpoint],
    nfe_list: Sequence[int] = DEFAULT_NFE_LIST,
    seeds: Sequence[int] = (0, 1, 2),
    gamma: Optional[GammaSchedule] = None,
    reference: Optional[np.ndarray] = None,
    n_eval: int = 4096,
    threads: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentReport:
    """MMD^2 of one trained model at several NFE values with shared seeds."""
    started = time.perf_counter()
    if isinstance(model, Checkpoint):
        gamma = gamma or model.gamma
        model = model_from_checkpoint(model)
    gamma = gamma or GammaSchedule()
    seeds = _check_seeds(seeds, 1)
    if not nfe_list:
        raise ConfigurationError("nfe_list must not be empty")
    if reference is None:
        reference = gen_toy2d(TOY, n_eval, _data_streams(0, 2)[1]).rows
    name = "nfe_sweep"

    def evaluate(nfe: int, seed: int) -> ArmOutcome:
        run = SampleRun(nfe=nfe, seed=seed)
        samples = generate(model, gamma, run, n_eval).samples  # type: ignore[arg-type]
        return ArmOutcome(arm=f"nfe{nfe}", seed=seed, metrics={"mmd2": mmd2_rbf(samples, reference).mmd2})

    tasks = [(lambda nfe=nfe, seed=seed: evaluate(nfe, seed)) for nfe in nfe_list for seed in seeds]
    outcomes = _run_tasks(tasks, threads)

    config = {
        "experiment": name,
        "nfe_list": [int(v) for v in nfe_list],
        "seeds": seeds,
        "n_eval": n_eval,
        "gamma": gamma.model_dump(mode="json"),
    }
    report = _assemble(name, config, outcomes, [MMD_NOTE], started)

    ordered = sorted(set(int(v) for v in nfe_list))
    by_seed = {(o.arm, o.seed): o.metrics["mmd2"] for o in outcomes}
    trend = True
    for low, high in zip(ordered, ordered[1:]):
        violations = sum(by_seed[(f"nfe{high}", s)] > by_seed[(f"nfe{low}", s)] for s in seeds)
        trend = trend and violations <= 1
    report.checks = {"non_increasing_with_nfe": bool(trend)}
    if 2 in ordered and 10 in ordered:
        report.checks["nfe10_le_nfe2"] = bool(report.arms["nfe10"]["mmd2"] <= report.arms["nfe2"]["mmd2"])

    curves = {"median mmd2": (np.array(ordered, dtype=float), np.array([report.arms[f"nfe{v}"]["mmd2"] for v in ordered]))}
    collected = _Collected(figures={"mmd_vs_nfe": line_svg(curves, title="MMD^2 against NFE")})
    return _finish(report, collected, out_dir)


def run_time_strategy_ablation(
    seeds: Sequence[int],
    budget: Optional[ExperimentBudget] = None,
    nfe: int = 10,
    threads: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentReport:
    """Train K=2 models under the four time-sampling strategies."""
    started = time.perf_counter()
    budget = budget or ExperimentBudget()
    seeds = _check_seeds(seeds, 3)
    name = "time_strategy_ablation"
    gamma = GammaSchedule(c=[1.0, 0.5])
    arms = [Arm(strategy.value, K=2, gamma=gamma, overrides={"time_strategy": strategy}) for strategy in TimeStrategy]
    data = {seed: _toy_data(seed, budget) for seed in seeds}
    tasks = [
        (lambda arm=arm, seed=seed: _train_and_sample(arm, seed, budget, nfe, *data[seed]))
        for arm in arms
        for seed in seeds
    ]
    outcomes = _run_tasks(tasks, threads)

    config = _snapshot(name, budget, seeds, arms, nfe=nfe, time_strategy_formulas=dict(TIME_STRATEGY_FORMULAS))
    report = _assemble(name, config, outcomes, [MMD_NOTE], started)
    report.checks = {"all_below_0.05": all(report.arms[a.name]["mmd2"] < 0.05 for a in arms)}
    return _finish(report, _collect(outcomes, data[seeds[0]][1], name), out_dir)


@dataclass
class AttractorData:
    """Standardized attractor states split into training windows and a held-out segment."""
    train: np.ndarray
    held_out: np.ndarray
    windows: np.ndarray
    config: AttractorConfig
    every: int


def attractor_data(
    kind: Union[str, AttractorKind], n_states: int, window: int, every: int = 5, held_out_fraction: float = 0.25
) -> AttractorData:
    kind = AttractorKind(kind)
    cfg = AttractorConfig(kind=kind, steps=1000 + every * n_states, burn_in=1000)
    states = subsample(integrate_attractor(cfg), every)
    ds, _ = standardize(Dataset(name=kind.value, rows=states))
    split = int(round(len(ds) * (1.0 - held_out_fraction)))
    train, held_out = ds.rows[:split], ds.rows[split:]
    return AttractorData(
        train=train, held_out=held_out, windows=make_attractor_windows(train, window), config=cfg, every=every
    )


def run_attractor_study(
    kind: Union[str, AttractorKind],
    seeds: Sequence[int],
    budget: Optional[ExperimentBudget] = None,
    n_states: int = 4000,
    window: int = 8,
    nfe: int = 10,
    free_run_steps: int = 2000,
    threads: int = 1,
    self_test: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
) -> ExperimentReport:
    """Time-series IDFF on a chaotic attractor: one-step-ahead scores and free-running boundedness."""
    started = time.perf_counter()
    budget = budget or ExperimentBudget()
    kind = AttractorKind(kind)
    seeds = _check_seeds(seeds, 1 if self_test else 2)
    name = f"attractor_{kind.value}"
    data = attractor_data(kind, n_states, window)
    note = f"MAE/RMSE/CC on standardized {kind.value} states stand in for the molecular-dynamics scores."

    if self_test:
        scores = trajectory_scores(data.held_out, data.held_out)
        outcomes = [
            ArmOutcome(arm="self_test", seed=seed, metrics={"mae": scores.mae, "rmse": scores.rmse, "cc": scores.cc})
            for seed in seeds
        ]
        config = {
            "experiment": name,
            "self_test": True,
            "attractor": data.config.model_dump(mode="json"),
            "n_states": n_states,
            "subsample_every": data.every,
            "seeds": seeds,
        }
        report = _assemble(name, config, outcomes, [note], started)
        return _finish(report, _Collected(), out_dir)

    arms = [Arm("K1", K=1, gamma=GammaSchedule(c=[1.0])), Arm("K2", K=2, gamma=GammaSchedule(c=[1.0, 0.5]))]
    center = 0.5 * (data.train.max(axis=0) + data.train.min(axis=0))
    half_width = 0.5 * (data.train.max(axis=0) - data.train.min(axis=0))

    def evaluate(arm: Arm, seed: int) -> ArmOutcome:
        config = budget.train_config(arm.K, seed)
        try:
            result: TrainResult = train_timeseries(data.windows, config)
        except DivergenceError as e:
            logger.error(f"arm {arm.name} seed {seed} failed: {e}")
            nan = float("nan")
            return ArmOutcome(arm.name, seed, {"mae": nan, "rmse": nan, "cc": nan, "free_run_extent": nan}, failed=True)
        run = SampleRun(nfe=nfe, seed=seed)
        one_step = generate_timeseries(result.model, arm.gamma, run, 1, x_init=data.held_out[:-1], cfg=config.path)
        scores = trajectory_scores(one_step[:, 0], data.held_out[1:])
        free = generate_timeseries(result.model, arm.gamma, run, free_run_steps, x_init=data.train[0], cfg=config.path)
        extent = float(np.max(np.abs(free[0] - center) / half_width))
        logger.info(f"arm {arm.name} seed {seed}: cc={scores.cc:.2f}% free-run extent={extent:.3f}")
        return ArmOutcome(
            arm=arm.name,
            seed=seed,
            metrics={"mae": scores.mae, "rmse": scores.rmse, "cc": scores.cc, "free_run_extent": extent},
            trace=result.trace,
            samples=free[0],
        )

    tasks = [(lambda arm=arm, seed=seed: evaluate(arm, seed)) for arm in arms for seed in seeds]
    outcomes = _run_tasks(tasks, threads)

    config = {
        "experiment": name,
        "attractor": data.config.model_dump(mode="json"),
        "n_states": n_states,
        "subsample_every": data.every,
        "window": window,
        "nfe": nfe,
        "free_run_steps": free_run_steps,
        "budget": budget.model_dump(mode="json"),
        "seeds": seeds,
        "arms": {arm.name: {"K": arm.K, "gamma": arm.gamma.model_dump(mode="json")} for arm in arms},
    }
    report = _assemble(name, config, outcomes, [note], started)
    report.checks = {
        "k1_cc_ge_90": bool(report.arms["K1"]["cc"] >= 90.0),
        "free_run_within_1.5x_box": all(report.arms[a.name]["free_run_extent"] <= 1.5 for a in arms),
    }

    collected = _Collected()
    for o in outcomes:
        if o.trace:
            collected.traces[f"{o.arm}_seed{o.seed}"] = o.trace
        if o.seed == seeds[0] and o.samples is not None:
            collected.figures[f"free_run_{o.arm}"] = scatter_svg(
                {"training states": data.train, o.arm: o.samples},
                title=f"{kind.value}: free-running {o.arm} (x, y)",
                trajectories=o.samples[None, :, :2],
            )
    return _finish(report, collected, out_dir)
