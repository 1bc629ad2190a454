"""
Command-line entry point for the IDFF toolkit.

Subcommands: datagen, train, sample, eval, likelihood and experiment. Every
command resolves a ``RunConfig`` (defaults < ``--config`` YAML file < flags),
prints it as a YAML snapshot on stdout and then runs.

Exit codes: 0 success, 1 I/O or checkpoint failure, 2 usage or invalid
configuration, 3 numerical abort.
"""

import argparse
import shlex
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import yaml
from pydantic import ValidationError

from src.config.settings import settings
from src.core.errors import (
    CheckpointError,
    ConfigurationError,
    DataFormatError,
    IDFFError,
    NumericalError,
)
from src.core.rng import make_rng
from src.data.checkpoint import checkpoint_from_model, load_checkpoint, model_from_checkpoint, save_checkpoint
from src.data.datasets import (
    Dataset,
    gen_toy2d,
    integrate_attractor,
    make_attractor_windows,
    read_dataset,
    standardize,
    subsample,
    write_dataset,
    write_trajectory,
)
from src.data.models import (
    AttractorConfig,
    AttractorKind,
    Checkpoint,
    DivergenceMode,
    ExperimentBudget,
    GammaMode,
    RunConfig,
    TimeStrategy,
    ToyName,
    VelocityMode,
)
from src.evaluation.metrics import mmd2_rbf, mmd_rows, trajectory_rows, trajectory_scores, write_metrics
from src.experiments.runner import (
    DEFAULT_NFE_LIST,
    run_attractor_study,
    run_coupling_ablation,
    run_nfe_sweep,
    run_order_comparison,
    run_time_strategy_ablation,
)
from src.flow.network import IDFFNet
from src.flow.sampling import generate, generate_timeseries, log_likelihood
from src.flow.training import train_static, train_timeseries, write_trace
from src.utils.logging import get_logger, setup_logging
from src.utils.svg import scatter_svg, write_svg

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

DATASET_NAMES = [t.value for t in ToyName] + [k.value for k in AttractorKind]

# flag dest -> (section, key) of RunConfig
FLAG_FIELDS: Dict[str, Tuple[str, str]] = {
    "hidden": ("model", "hidden_dim"),
    "depth": ("model", "depth"),
    "k": ("model", "K"),
    "sigma0": ("path", "sigma0"),
    "batch": ("train", "batch_size"),
    "iters": ("train", "iters"),
    "lr": ("train", "lr"),
    "use_ot": ("train", "use_ot"),
    "time_strategy": ("train", "time_strategy"),
    "train_seed": ("train", "seed"),
    "log_every": ("train", "log_every"),
    "window": ("train", "window"),
    "nfe": ("run", "nfe"),
    "run_seed": ("run", "seed"),
    "n": ("run", "n"),
    "deterministic": ("run", "deterministic"),
    "final_step_deterministic": ("run", "final_step_deterministic"),
    "threads": ("run", "threads"),
    "gamma_mode": ("gamma", "gamma0_mode"),
    "velocity": ("gamma", "velocity"),
}


# -- configuration ----------------------------------------------------------


def _merge(base: Dict[str, Any], layer: Dict[str, Any]) -> Dict[str, Any]:
    for key, value in layer.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def read_config_file(path: Optional[str]) -> Dict[str, Any]:
    """Parse a YAML run configuration; an absent path is an empty layer."""
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = yaml.safe_load(fh)
        except yaml.YAMLError as e:
            raise ConfigurationError(f"{path} is not valid YAML: {e}") from e
    if payload is None:
        return {}
    if not isinstance(payload, dict):
        raise ConfigurationError(f"{path} must hold a mapping of config sections")
    return payload


def _flag_layer(args: argparse.Namespace) -> Dict[str, Any]:
    layer: Dict[str, Dict[str, Any]] = {}
    for dest, (section, key) in FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            layer.setdefault(section, {})[key] = value
    return layer


def _apply_gamma_flags(resolved: Dict[str, Any], args: argparse.Namespace) -> None:
    """Set c[0]/c[1] from --gamma1/--gamma2; trailing zero coefficients are dropped."""
    gamma1 = getattr(args, "gamma1", None)
    gamma2 = getattr(args, "gamma2", None)
    if gamma1 is None and gamma2 is None:
        return
    c = list(resolved["gamma"]["c"])
    for index, value in ((0, gamma1), (1, gamma2)):
        if value is None:
            continue
        while len(c) <= index:
            c.append(0.0)
        c[index] = value
    while c and c[-1] == 0.0:
        c.pop()
    resolved["gamma"]["c"] = c


def resolve_config(args: argparse.Namespace, base: Optional[Dict[str, Any]] = None) -> RunConfig:
    """Defaults < ``base`` (e.g. a checkpoint) < config file < explicit flags."""
    resolved = RunConfig().model_dump(mode="json")
    _merge(resolved, base or {})
    _merge(resolved, read_config_file(getattr(args, "config", None)))
    _merge(resolved, _flag_layer(args))
    _apply_gamma_flags(resolved, args)
    return RunConfig.model_validate(resolved)


def _checkpoint_layer(ckpt: Checkpoint) -> Dict[str, Any]:
    return {
        "model": {
            "hidden_dim": ckpt.model.hidden_dim,
            "depth": ckpt.model.depth,
            "K": ckpt.model.K,
            "time_embed_dim": ckpt.model.time_embed_dim,
        },
        "path": ckpt.path.model_dump(mode="json"),
        "gamma": ckpt.gamma.model_dump(mode="json"),
    }


def snapshot_text(config: RunConfig, argv: Sequence[str]) -> str:
    """YAML snapshot of the resolved config, headed by the invoking command line."""
    body = yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
    return f"# idff {shlex.join(argv)}\n{body}"


def _announce(args: argparse.Namespace, config: RunConfig) -> None:
    print(snapshot_text(config, args.argv), end="", flush=True)


def _parse_point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError:
        raise ConfigurationError(f"cannot parse point '{text}'; expected comma-separated numbers") from None


def _seed_list(count: int) -> List[int]:
    if count < 1:
        raise ConfigurationError(f"--seeds must be >= 1, got {count}")
    return list(range(count))


def _model_for(ckpt_path: str) -> Tuple[Checkpoint, IDFFNet]:
    ckpt = load_checkpoint(ckpt_path)
    return ckpt, model_from_checkpoint(ckpt)


def _fit_gamma(config: RunConfig, model: IDFFNet) -> RunConfig:
    if config.gamma.K <= model.K:
        return config
    logger.warning(f"gamma schedule has {config.gamma.K} orders, model only {model.K}; truncating")
    return config.model_copy(update={"gamma": config.gamma.truncated(model.K)})


# -- commands ---------------------------------------------------------------


def cmd_datagen(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    _announce(args, config)
    rng = make_rng(config.run.seed)

    if args.name in {k.value for k in AttractorKind}:
        cfg = AttractorConfig(
            kind=AttractorKind(args.name),
            dt_int=args.dt,
            steps=args.burn_in + args.every * args.steps,
            burn_in=args.burn_in,
        )
        states = subsample(integrate_attractor(cfg), args.every)[: args.steps]
        if args.standardize:
            states = standardize(Dataset(name=args.name, rows=states))[0].rows
        write_trajectory(states, args.out, args.name)
        rows = states.shape[0]
    else:
        ds = gen_toy2d(args.name, args.rows or config.run.n, rng)
        if args.standardize:
            ds = standardize(ds)[0]
        write_dataset(ds, args.out)
        rows = len(ds)
    print(f"wrote {rows} rows to {args.out}")


def cmd_train(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    _announce(args, config)
    ds = read_dataset(args.data)
    train_config = config.to_train_config()

    if args.timeseries:
        windows = make_attractor_windows(ds.rows, config.train.window)
        result = train_timeseries(windows, train_config)
    else:
        result = train_static(ds.rows, train_config)

    ckpt = checkpoint_from_model(result.model, path=config.path, gamma=config.gamma.truncated(result.model.K))
    save_checkpoint(ckpt, args.out)
    trace_path = Path(args.trace) if args.trace else Path(args.out).with_suffix(".trace.csv")
    write_trace(result.trace, trace_path)

    final = result.final
    if final is None:
        print("no training iterations run; checkpoint holds the initial parameters")
    else:
        print(yaml.safe_dump({"final_loss": final.model_dump(exclude_none=True)}, sort_keys=False), end="")
    print(f"checkpoint: {args.out}\ntrace: {trace_path}")


def cmd_sample(args: argparse.Namespace) -> None:
    ckpt, model = _model_for(args.ckpt)
    config = _fit_gamma(resolve_config(args, _checkpoint_layer(ckpt)), model)
    _announce(args, config)
    run = config.to_sample_run(store_trajectory=args.traj)

    if args.timeseries:
        x_init = _parse_point(args.init) if args.init else None
        sequence = generate_timeseries(model, config.gamma, run, config.run.n, x_init=x_init, cfg=config.path)
        write_trajectory(sequence[0], args.out, "generated")
        print(f"wrote {sequence.shape[1]}-step sequence to {args.out}")
        return

    result = generate(model, config.gamma, run, config.run.n, cfg=config.path)
    write_dataset(Dataset(name="generated", rows=result.samples), args.out)
    if result.trajectory is not None:
        _write_sampler_paths(result.trajectory, Path(args.out).with_suffix(".paths.csv"))
    if args.svg:
        series = {"generated": result.samples}
        if args.reference:
            series = {"reference": read_dataset(args.reference).rows, **series}
        write_svg(scatter_svg(series, title=f"nfe={run.nfe}", trajectories=result.trajectory), args.svg)
    print(f"wrote {result.samples.shape[0]} samples to {args.out}")


def _write_sampler_paths(trajectory: np.ndarray, path: Path) -> Path:
    """Long-format table of sampler states: chain, step, x0..x{d-1}."""
    B, steps, d = trajectory.shape
    frame = pd.DataFrame(trajectory.reshape(B * steps, d), columns=[f"x{i}" for i in range(d)])
    frame.insert(0, "step", np.tile(np.arange(steps), B))
    frame.insert(0, "chain", np.repeat(np.arange(B), steps))
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def cmd_eval(args: argparse.Namespace) -> None:
    config = resolve_config(args)
    _announce(args, config)
    if args.metric == "mmd":
        result = mmd2_rbf(read_dataset(args.a).rows, read_dataset(args.b).rows, args.bandwidth)
        rows = mmd_rows(result)
    else:
        scores = trajectory_scores(read_dataset(args.pred).rows, read_dataset(args.truth).rows)
        rows = trajectory_rows(scores)
    for metric, value, _ in rows:
        print(f"{metric}={value:.10g}")
    if args.out:
        write_metrics(rows, args.out)


def cmd_likelihood(args: argparse.Namespace) -> None:
    ckpt, model = _model_for(args.ckpt)
    config = _fit_gamma(resolve_config(args, _checkpoint_layer(ckpt)), model)
    _announce(args, config)
    if args.x:
        points = np.atleast_2d(_parse_point(args.x))
    elif args.data:
        points = read_dataset(args.data).rows
    else:
        raise ConfigurationError("likelihood needs --x or --data")

    result = log_likelihood(
        model,
        config.gamma,
        points,
        config.run.nfe,
        args.div,
        rng=make_rng(config.run.seed),
        cfg=config.path,
        probes=args.probes,
        n=1 if model.n_steps else None,
    )
    frame = pd.DataFrame({
        "log_prob": result.log_prob,
        "log_p0": result.log_p0,
        "divergence": result.divergence,
        "std_error": result.std_error,
    })
    for value in result.log_prob:
        print(f"log_prob={value:.10g}")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(args.out, index=False, float_format="%.17g")


def _budget(config: RunConfig, n_train: int) -> ExperimentBudget:
    return ExperimentBudget(
        iters=config.train.iters,
        batch_size=config.train.batch_size,
        lr=config.train.lr,
        hidden_dim=config.model.hidden_dim,
        depth=config.model.depth,
        sigma0=config.path.sigma0,
        n_train=n_train,
        n_eval=config.run.n,
    )


def cmd_experiment(args: argparse.Namespace) -> None:
    base = None
    if args.study == "nfe-sweep":
        if not args.ckpt:
            raise ConfigurationError("nfe-sweep needs --ckpt")
        ckpt = load_checkpoint(args.ckpt)
        base = _checkpoint_layer(ckpt)
    config = resolve_config(args, base)
    _announce(args, config)
    seeds = _seed_list(args.seeds)
    budget = _budget(config, args.n_train)
    threads = config.run.threads
    nfe = config.run.nfe if args.nfe is not None else None

    if args.study == "order-comparison":
        report = run_order_comparison(
            seeds, nfe=nfe or 2, budget=budget, threads=threads, self_test=args.self_test, out_dir=args.out
        )
    elif args.study == "coupling-ablation":
        report = run_coupling_ablation(seeds, budget=budget, nfe=nfe or 10, threads=threads, out_dir=args.out)
    elif args.study == "time-strategy":
        report = run_time_strategy_ablation(seeds, budget=budget, nfe=nfe or 10, threads=threads, out_dir=args.out)
    elif args.study == "nfe-sweep":
        nfe_list = [int(v) for v in args.nfe_list.split(",")] if args.nfe_list else list(DEFAULT_NFE_LIST)
        reference = read_dataset(args.reference).rows if args.reference else None
        report = run_nfe_sweep(
            ckpt,
            nfe_list=nfe_list,
            seeds=seeds,
            gamma=config.gamma,
            reference=reference,
            n_eval=config.run.n,
            threads=threads,
            out_dir=args.out,
        )
    else:
        report = run_attractor_study(
            args.kind,
            seeds,
            budget=budget,
            n_states=args.n_states,
            window=config.train.window,
            nfe=nfe or 10,
            free_run_steps=args.free_run_steps,
            threads=threads,
            self_test=args.self_test,
            out_dir=args.out,
        )

    print(yaml.safe_dump({"arms": report.arms, "checks": report.checks}, sort_keys=False), end="")
    if report.failed_arms:
        print(f"failed arms: {', '.join(report.failed_arms)}")
    if args.out:
        print(f"report: {args.out}")


# -- parser -----------------------------------------------------------------


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration (flags override it)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads for arms and seeds")
    parser.add_argument("--log-level", choices=["error", "info", "debug"], default=None)


def _model_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--k", type=int, default=None, help="Number of derivative heads (0..3)")
    parser.add_argument("--hidden", type=int, default=None)
    parser.add_argument("--depth", type=int, default=None)
    parser.add_argument("--sigma0", type=float, default=None)


def _train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--iters", type=int, default=None)
    parser.add_argument("--batch", type=int, default=None)
    parser.add_argument("--lr", type=float, default=None)
    parser.add_argument("--window", type=int, default=None, help="Steps per time-series window")
    parser.add_argument(
        "--time-strategy", dest="time_strategy", choices=[s.value for s in TimeStrategy], default=None
    )


def _run_flags(parser: argparse.ArgumentParser, seed_dest: str = "run_seed") -> None:
    parser.add_argument("--nfe", type=int, default=None)
    parser.add_argument("--n", type=int, default=None, help="Samples to draw (sequence length with --timeseries)")
    parser.add_argument("--seed", dest=seed_dest, type=int, default=None)


def _gamma_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--gamma1", type=float, default=None, help="c[0]; 0 together with --gamma2 0 is the baseline")
    parser.add_argument("--gamma2", type=float, default=None, help="c[1]")
    parser.add_argument("--gamma-mode", dest="gamma_mode", choices=[m.value for m in GammaMode], default=None)
    parser.add_argument(
        "--velocity", choices=[m.value for m in VelocityMode], default=None, help="Velocity term of the drift"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idff", description="Implicit dynamical flow fusion toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="Generate a toy or attractor dataset")
    _common(p)
    p.add_argument("--name", required=True, choices=DATASET_NAMES)
    p.add_argument("--rows", type=int, default=None, help="Toy sample count (default run.n)")
    p.add_argument("--steps", type=int, default=2000, help="Attractor rows after burn-in and subsampling")
    p.add_argument("--every", type=int, default=1, help="Keep every n-th integrator state")
    p.add_argument("--burn-in", dest="burn_in", type=int, default=1000)
    p.add_argument("--dt", type=float, default=0.01, help="Integrator step")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--seed", dest="run_seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_datagen)

    p = sub.add_parser("train", help="Train a model and write a checkpoint and loss trace")
    _common(p)
    _model_flags(p)
    _train_flags(p)
    _gamma_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="Checkpoint path")
    p.add_argument("--trace", default=None, help="Loss trace CSV (default <out>.trace.csv)")
    p.add_argument("--seed", dest="train_seed", type=int, default=None)
    p.add_argument("--use-ot", dest="use_ot", action="store_const", const=True, default=None)
    p.add_argument("--timeseries", action="store_true")
    p.add_argument("--log-every", dest="log_every", type=int, default=None)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sample", help="Draw samples or a sequence from a checkpoint")
    _common(p)
    _run_flags(p)
    _gamma_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--traj", action="store_true", help="Also write every sampler state")
    p.add_argument("--svg", default=None, help="Scatter plot path")
    p.add_argument("--reference", default=None, help="Dataset drawn beside the samples in the plot")
    p.add_argument("--timeseries", action="store_true")
    p.add_argument("--init", default=None, help="Initial state for --timeseries, e.g. '1,1,1'")
    p.add_argument("--deterministic", action="store_const", const=True, default=None)
    p.add_argument(
        "--stochastic-final", dest="final_step_deterministic", action="store_const", const=False, default=None
    )
    p.set_defaults(handler=cmd_sample)

    p = sub.add_parser("eval", help="Compare sample sets or trajectories")
    metrics = p.add_subparsers(dest="metric", required=True)
    m = metrics.add_parser("mmd")
    _common(m)
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    m.add_argument("--bandwidth", type=float, default=None)
    m.add_argument("--out", default=None)
    m.set_defaults(handler=cmd_eval)
    m = metrics.add_parser("traj")
    _common(m)
    m.add_argument("--pred", required=True)
    m.add_argument("--truth", required=True)
    m.add_argument("--out", default=None)
    m.set_defaults(handler=cmd_eval)

    p = sub.add_parser("likelihood", help="Log-density of points under a checkpoint")
    _common(p)
    _run_flags(p)
    _gamma_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--x", default=None, help="One point, e.g. '0,0'")
    p.add_argument("--data", default=None, help="Dataset of query points")
    p.add_argument("--div", choices=[d.value for d in DivergenceMode], default=DivergenceMode.EXACT_FD.value)
    p.add_argument("--probes", type=int, default=8)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_likelihood)

    p = sub.add_parser("experiment", help="Run a scripted study and write a report directory")
    _common(p)
    _model_flags(p)
    _train_flags(p)
    _run_flags(p)
    _gamma_flags(p)
    p.add_argument(
        "study", choices=["order-comparison", "coupling-ablation", "nfe-sweep", "time-strategy", "attractor"]
    )
    p.add_argument("--seeds", type=int, default=3, help="Number of seeds, 0..seeds-1")
    p.add_argument("--n-train", dest="n_train", type=int, default=20000)
    p.add_argument("--self-test", dest="self_test", action="store_true")
    p.add_argument("--ckpt", default=None, help="Model for nfe-sweep")
    p.add_argument("--reference", default=None, help="Reference samples for nfe-sweep")
    p.add_argument("--nfe-list", dest="nfe_list", default=None, help="e.g. '2,5,10'")
    p.add_argument("--kind", choices=[k.value for k in AttractorKind], default=AttractorKind.LORENZ.value)
    p.add_argument("--n-states", dest="n_states", type=int, default=4000)
    p.add_argument("--free-run-steps", dest="free_run_steps", type=int, default=2000)
    p.add_argument("--out", default=None, help="Report directory")
    p.set_defaults(handler=cmd_experiment)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    args.argv = argv

    setup_logging(args.log_level)
    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        handler(args)
    except NumericalError as e:
        logger.error(f"numerical abort: {e}")
        return EXIT_NUMERICAL
    except (CheckpointError, DataFormatError, OSError) as e:
        logger.error(f"I/O failure: {e}")
        return EXIT_IO
    except (ValidationError, IDFFError) as e:
        logger.error(f"invalid configuration: {e}")
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
