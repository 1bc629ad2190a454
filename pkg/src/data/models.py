"""
Data models for the IDFF toolkit.

Configuration and result records are pydantic models; their validators carry
the invariants the rest of the code relies on.
"""

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from src.config.settings import settings


class TimeStrategy(str, Enum):
    """How training times t are drawn from a uniform variate."""
    LINEAR = "linear"
    LOGARITHMIC = "logarithmic"
    BETA = "beta"
    COSINE = "cosine"


class CouplingMode(str, Enum):
    """Pairing of noise and data minibatches."""
    INDEPENDENT = "independent"
    OT = "ot"


class GammaMode(str, Enum):
    """Convention for the velocity coefficient gamma^0."""
    NORMALIZED = "normalized"
    UNIT = "unit"


class VelocityMode(str, Enum):
    """Velocity term of the sampler drift."""
    DENOISER = "denoiser"
    MARGINAL = "marginal"


class DivergenceMode(str, Enum):
    """Divergence estimator used by the likelihood integrator."""
    EXACT_FD = "exact_fd"
    HUTCHINSON = "hutchinson"


class ToyName(str, Enum):
    """2D toy distributions."""
    EIGHT_GAUSSIANS = "eight_gaussians"
    TWO_MOONS = "two_moons"
    CHECKERBOARD = "checkerboard"


class AttractorKind(str, Enum):
    """Chaotic 3D systems."""
    LORENZ = "lorenz"
    ROSSLER = "rossler"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathConfig(_Strict):
    """Gaussian bridge parameters."""
    sigma0: float = Field(default=0.2, gt=0.0, description="Bridge bandwidth sigma_0")
    t_clamp_eps: float = Field(default=1e-3, gt=0.0, lt=0.1, description="Training-time clamp on t")


class ModelConfig(_Strict):
    """Architecture of the IDFF network."""
    data_dim: int = Field(..., ge=1, description="Dimension of the data space")
    hidden_dim: int = Field(default=128, ge=1, description="Width of the trunk layers")
    depth: int = Field(default=2, ge=1, description="Number of hidden trunk layers")
    K: int = Field(default=2, ge=0, le=3, description="Number of derivative heads")
    time_embed_dim: int = Field(default=16, ge=1, description="Width of the time and step embeddings")
    n_embed: Optional[int] = Field(default=None, ge=1, description="Max step index N in time-series mode")

    @property
    def timeseries(self) -> bool:
        return self.n_embed is not None


class TrainConfig(_Strict):
    """Inputs of the training loops."""
    batch_size: int = Field(default=256, ge=1)
    iters: int = Field(default=8000, ge=0, description="Optimizer steps; 0 returns the initialization")
    lr: float = Field(default=1e-3, gt=0.0)
    use_ot: bool = Field(default=False, description="Re-pair minibatches by exact OT")
    time_strategy: TimeStrategy = Field(default=TimeStrategy.LINEAR)
    K: int = Field(default=2, ge=0, le=3)
    seed: int = Field(default=0, ge=0)
    path: PathConfig = Field(default_factory=PathConfig)
    hidden_dim: int = Field(default=128, ge=1)
    depth: int = Field(default=2, ge=1)
    time_embed_dim: int = Field(default=16, ge=1)
    log_every: int = Field(default=500, ge=1, description="Progress log period in iterations")

    @model_validator(mode="after")
    def check_ot_batch(self) -> "TrainConfig":
        if self.use_ot and self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 when use_ot is on")
        return self

    def model_config_for(self, data_dim: int, n_embed: Optional[int] = None) -> ModelConfig:
        return ModelConfig(
            data_dim=data_dim,
            hidden_dim=self.hidden_dim,
            depth=self.depth,
            K=self.K,
            time_embed_dim=self.time_embed_dim,
            n_embed=n_embed,
        )


class GammaSchedule(_Strict):
    """Momentum coefficients gamma^k_t = c[k] * sigma_t^2 and the gamma^0 convention."""
    c: List[float] = Field(default_factory=lambda: [1.0, 0.5], max_length=3)
    gamma0_mode: GammaMode = Field(default=GammaMode.NORMALIZED)
    velocity: VelocityMode = Field(
        default=VelocityMode.DENOISER,
        description="denoiser: (x1_hat - x) / (1 - t); marginal: adds the sigma0^2 / (2 sigma_t) order-1 head term",
    )

    @property
    def K(self) -> int:
        return len(self.c)

    def truncated(self, K: int) -> "GammaSchedule":
        """Schedule restricted to the first K orders."""
        return GammaSchedule(c=list(self.c[:K]), gamma0_mode=self.gamma0_mode, velocity=self.velocity)

    def momentum(self, sigma_t: float) -> List[float]:
        """gamma^1_t .. gamma^K_t."""
        var = sigma_t * sigma_t
        return [ck * var for ck in self.c]

    def gamma0(self, sigma_t: float) -> float:
        if self.gamma0_mode is GammaMode.UNIT:
            return 1.0
        return 1.0 - sum(self.momentum(sigma_t))

    def score_coefficient(self, sigma_t: float) -> float:
        """(2 gamma^1_t - sigma_t^2) / 2, the weight of the first-order term in the drift."""
        if not self.c:
            return 0.0
        return (2.0 * self.c[0] - 1.0) * sigma_t * sigma_t / 2.0


class SampleRun(_Strict):
    """Settings of one sampling run."""
    nfe: int = Field(default=10, ge=1, description="Number of drift evaluations")
    seed: int = Field(default=0, ge=0)
    store_trajectory: bool = Field(default=False)
    final_step_deterministic: bool = Field(default=True)
    deterministic: bool = Field(default=False, description="Drop the diffusion term (ODE sampling)")

    @computed_field  # type: ignore[misc]
    @property
    def dt(self) -> float:
        return 1.0 / self.nfe


ATTRACTOR_DEFAULT_PARAMS: Dict[AttractorKind, Dict[str, float]] = {
    AttractorKind.LORENZ: {"sigma": 10.0, "rho": 28.0, "beta": 8.0 / 3.0},
    AttractorKind.ROSSLER: {"a": 0.2, "b": 0.2, "c": 5.7},
}


class AttractorConfig(_Strict):
    """Integration settings for a chaotic attractor."""
    kind: AttractorKind = Field(default=AttractorKind.LORENZ)
    params: Dict[str, float] = Field(default_factory=dict, description="System parameters")
    dt_int: float = Field(default=0.01, gt=0.0)
    steps: int = Field(default=11000, ge=1, description="Integrator steps including burn-in")
    burn_in: int = Field(default=1000, ge=0)
    init: List[float] = Field(default_factory=lambda: [1.0, 1.0, 1.0], min_length=3, max_length=3)

    @model_validator(mode="after")
    def fill_params(self) -> "AttractorConfig":
        if self.steps <= self.burn_in:
            raise ValueError("steps must exceed burn_in")
        defaults = dict(ATTRACTOR_DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(defaults)
        if unknown:
            raise ValueError(f"unknown {self.kind.value} parameters: {sorted(unknown)}")
        defaults.update(self.params)
        self.params = defaults
        if not all(math.isfinite(v) for v in self.init):
            raise ValueError("init must be finite")
        return self


class LossBreakdown(BaseModel):
    """Per-iteration decomposition of the IDFF loss."""
    total: float = Field(..., ge=0.0)
    denoiser: float = Field(..., ge=0.0)
    per_order: List[float] = Field(default_factory=list)
    coupling_cost: Optional[float] = Field(default=None, description="OT transport cost of the batch")
    independent_cost: Optional[float] = Field(default=None, description="Identity-pairing cost of the batch")

    @model_validator(mode="after")
    def check_decomposition(self) -> "LossBreakdown":
        if any(term < 0 for term in self.per_order):
            raise ValueError("loss terms must be non-negative")
        expected = self.denoiser + sum(self.per_order)
        if abs(self.total - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError(f"total {self.total} != denoiser + orders {expected}")
        return self

    @classmethod
    def from_terms(cls, denoiser: float, per_order: List[float], **extra: Any) -> "LossBreakdown":
        return cls(total=denoiser + sum(per_order), denoiser=denoiser, per_order=list(per_order), **extra)


class MMDResult(BaseModel):
    """Unbiased squared MMD estimate."""
    mmd2: float
    bandwidth: float = Field(..., gt=0.0)
    n: int = Field(..., ge=2)
    m: int = Field(..., ge=2)


class TrajectoryScores(BaseModel):
    """Trajectory agreement metrics."""
    mae: float = Field(..., ge=0.0)
    rmse: float = Field(..., ge=0.0)
    cc: float = Field(..., description="Mean per-dimension Pearson correlation, percent")


class ParamArray(BaseModel):
    """One serialized parameter array."""
    shape: List[int]
    data: List[float]


class Checkpoint(BaseModel):
    """Versioned model weights plus the configuration needed to use them."""
    format_version: str
    model: ModelConfig
    path: PathConfig = Field(default_factory=PathConfig)
    gamma: GammaSchedule = Field(default_factory=GammaSchedule)
    params: Dict[str, ParamArray] = Field(default_factory=dict)


class ReportRow(BaseModel):
    """One metric value of one arm and seed."""
    arm: str
    seed: int
    metric: str
    value: float


class ExperimentBudget(_Strict):
    """Training and evaluation budget shared by every arm of an experiment."""
    iters: int = Field(default=8000, ge=0)
    batch_size: int = Field(default=256, ge=2)
    lr: float = Field(default=1e-3, gt=0.0)
    hidden_dim: int = Field(default=128, ge=1)
    depth: int = Field(default=2, ge=1)
    sigma0: float = Field(default=0.2, gt=0.0)
    n_train: int = Field(default=20000, ge=2)
    n_eval: int = Field(default=4096, ge=2)

    def train_config(self, K: int, seed: int, **overrides: Any) -> TrainConfig:
        fields: Dict[str, Any] = dict(
            batch_size=self.batch_size,
            iters=self.iters,
            lr=self.lr,
            K=K,
            seed=seed,
            path=PathConfig(sigma0=self.sigma0),
            hidden_dim=self.hidden_dim,
            depth=self.depth,
        )
        fields.update(overrides)
        return TrainConfig(**fields)


class ExperimentReport(BaseModel):
    """Result of one scripted reproduction."""
    name: str
    config: Dict[str, Any] = Field(default_factory=dict, description="Snapshot that reproduces the run")
    rows: List[ReportRow] = Field(default_factory=list)
    arms: Dict[str, Dict[str, float]] = Field(default_factory=dict, description="Per-arm median metrics")
    seeds: Dict[str, List[int]] = Field(default_factory=dict)
    checks: Dict[str, bool] = Field(default_factory=dict, description="Named pass/fail properties")
    notes: List[str] = Field(default_factory=list)
    failed_arms: List[str] = Field(default_factory=list)
    wall_time: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def check_arms(self) -> "ExperimentReport":
        keys: Optional[Tuple[str, ...]] = None
        for arm, metrics in self.arms.items():
            if arm not in self.seeds:
                raise ValueError(f"arm '{arm}' has no recorded seeds")
            arm_keys = tuple(sorted(metrics))
            if keys is not None and arm_keys != keys:
                raise ValueError(f"arm '{arm}' metrics {arm_keys} differ from {keys}")
            keys = arm_keys
        return self


# -- command-line run configuration ----------------------------------------


class ModelSection(_Strict):
    hidden_dim: int = Field(default=128, ge=1)
    depth: int = Field(default=2, ge=1)
    K: int = Field(default=2, ge=0, le=3)
    time_embed_dim: int = Field(default=16, ge=1)


class TrainSection(_Strict):
    batch_size: int = Field(default=256, ge=1)
    iters: int = Field(default=8000, ge=0)
    lr: float = Field(default=1e-3, gt=0.0)
    use_ot: bool = False
    time_strategy: TimeStrategy = TimeStrategy.LINEAR
    seed: int = Field(default=0, ge=0)
    log_every: int = Field(default=500, ge=1)
    window: int = Field(default=8, ge=1, description="Steps per window in time-series mode")


class RunSection(_Strict):
    nfe: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0)
    n: int = Field(default=4096, ge=1, description="Number of samples or sequence length")
    final_step_deterministic: bool = True
    deterministic: bool = False
    threads: int = Field(default_factory=lambda: settings.DEFAULT_THREADS, ge=1)


class RunConfig(_Strict):
    """Resolved configuration of one command invocation."""
    model: ModelSection = Field(default_factory=ModelSection)
    path: PathConfig = Field(default_factory=PathConfig)
    train: TrainSection = Field(default_factory=TrainSection)
    gamma: GammaSchedule = Field(default_factory=GammaSchedule)
    run: RunSection = Field(default_factory=RunSection)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.train.batch_size,
            iters=self.train.iters,
            lr=self.train.lr,
            use_ot=self.train.use_ot,
            time_strategy=self.train.time_strategy,
            K=self.model.K,
            seed=self.train.seed,
            path=self.path,
            hidden_dim=self.model.hidden_dim,
            depth=self.model.depth,
            time_embed_dim=self.model.time_embed_dim,
            log_every=self.train.log_every,
        )

    def to_sample_run(self, store_trajectory: bool = False) -> SampleRun:
        return SampleRun(
            nfe=self.run.nfe,
            seed=self.run.seed,
            store_trajectory=store_trajectory,
            final_step_deterministic=self.run.final_step_deterministic,
            deterministic=self.run.deterministic,
        )
