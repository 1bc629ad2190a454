"""
Dataset generators, standardization and CSV persistence.

Toy 2D distributions for distribution-matching studies and Lorenz/Rossler
trajectories for the time-series study. Files start with a metadata line
``dim=<d>,name=<name>,rows=<M>`` followed by one comma-separated sample per
line; trajectory files carry a leading integer ``step`` column.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.datasets import make_moons

from src.config.settings import settings
from src.core.errors import ConfigurationError, DataFormatError, DimensionMismatchError, DivergenceError, DomainError
from src.core.rng import child_seed
from src.data.models import AttractorConfig, AttractorKind, ToyName
from src.utils.logging import get_logger

logger = get_logger(__name__)

EIGHT_GAUSSIANS_RADIUS = 2.0
EIGHT_GAUSSIANS_STD = 0.15
TWO_MOONS_NOISE = 0.1
CHECKERBOARD_CELLS = 4
FLOAT_FORMAT = "%.17g"


@dataclass
class Standardization:
    """Affine transform x -> (x - mean) / scale."""
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.scale

    def invert(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.scale + self.mean


@dataclass
class Dataset:
    """Named collection of data rows."""
    name: str
    rows: np.ndarray
    standardization: Optional[Standardization] = None

    def __post_init__(self) -> None:
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise DimensionMismatchError(f"dataset rows must be (M, d), got {self.rows.shape}")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return int(self.rows.shape[0])


# -- toy distributions ------------------------------------------------------


def eight_gaussian_centers() -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(8) / 8
    return EIGHT_GAUSSIANS_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def gen_toy2d(name: Union[str, ToyName], M: int, rng: np.random.Generator) -> Dataset:
    """Draw ``M`` samples from a named 2D toy distribution."""
    try:
        toy = ToyName(name)
    except ValueError:
        raise ConfigurationError(
            f"unknown toy distribution '{name}'; expected one of {[t.value for t in ToyName]}"
        ) from None
    if M < 1:
        raise ConfigurationError(f"number of rows must be >= 1, got {M}")

    if toy is ToyName.EIGHT_GAUSSIANS:
        modes = rng.integers(0, 8, M)
        rows = eight_gaussian_centers()[modes] + EIGHT_GAUSSIANS_STD * rng.standard_normal((M, 2))
    elif toy is ToyName.TWO_MOONS:
        rows, _ = make_moons(n_samples=M, noise=TWO_MOONS_NOISE, random_state=child_seed(rng))
    else:
        # Black cells of a 4x4 board over [-2, 2]^2: (i + j) even.
        cells = [(i, j) for i in range(CHECKERBOARD_CELLS) for j in range(CHECKERBOARD_CELLS) if (i + j) % 2 == 0]
        corners = np.array(cells, dtype=np.float64) - CHECKERBOARD_CELLS / 2
        rows = corners[rng.integers(0, len(cells), M)] + rng.random((M, 2))
    return Dataset(name=toy.value, rows=rows)


# -- attractors -------------------------------------------------------------


def lorenz_field(state: np.ndarray, params: Dict[str, float]) -> np.ndarray:
    x, y, z = state
    return np.array([
        params["sigma"] * (y - x),
        x * (params["rho"] - z) - y,
        x * y - params["beta"] * z,
    ])


def rossler_field(state: np.ndarray, params: Dict[str, float]) -> np.ndarray:
    x, y, z = state
    return np.array([
        -y - z,
        x + params["a"] * y,
        params["b"] + z * (x - params["c"]),
    ])


VECTOR_FIELDS: Dict[AttractorKind, Callable[[np.ndarray, Dict[str, float]], np.ndarray]] = {
    AttractorKind.LORENZ: lorenz_field,
    AttractorKind.ROSSLER: rossler_field,
}


def rk4_step(field: Callable[[np.ndarray], np.ndarray], state: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step of an autonomous system."""
    k1 = field(state)
    k2 = field(state + 0.5 * dt * k1)
    k3 = field(state + 0.5 * dt * k2)
    k4 = field(state + dt * k3)
    return state + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def integrate_attractor(cfg: AttractorConfig) -> np.ndarray:
    """
    Integrate a Lorenz or Rossler system with RK4.

    Records ``cfg.steps`` states starting from ``cfg.init`` and drops the first
    ``cfg.burn_in`` of them, so the result has ``steps - burn_in`` rows.
    """
    vector_field = VECTOR_FIELDS[cfg.kind]
    params = cfg.params

    def field(state: np.ndarray) -> np.ndarray:
        return vector_field(state, params)

    states = np.empty((cfg.steps, 3))
    state = np.asarray(cfg.init, dtype=np.float64)
    limit = settings.STATE_NORM_LIMIT
    for step in range(cfg.steps):
        states[step] = state
        state = rk4_step(field, state, cfg.dt_int)
        if not np.all(np.isfinite(state)) or np.linalg.norm(state) > limit:
            logger.error(f"{cfg.kind.value} integration diverged at step {step}")
            raise DivergenceError(f"{cfg.kind.value} state norm exceeded {limit:g} at step {step}")
    logger.debug(f"Integrated {cfg.kind.value}: {cfg.steps} steps, burn-in {cfg.burn_in}")
    return states[cfg.burn_in:]


def subsample(trajectory: np.ndarray, every: int = 5) -> np.ndarray:
    """Keep every ``every``-th state."""
    if every < 1:
        raise ConfigurationError(f"subsampling period must be >= 1, got {every}")
    return np.asarray(trajectory)[::every]


def make_attractor_windows(trajectory: np.ndarray, window: int, stride: int = 1) -> np.ndarray:
    """Slice a (T, d) trajectory into overlapping windows of ``window + 1`` states."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if window < 1 or stride < 1:
        raise ConfigurationError("window and stride must be >= 1")
    length = window + 1
    if trajectory.ndim != 2 or trajectory.shape[0] < length:
        raise DimensionMismatchError(
            f"trajectory of shape {trajectory.shape} is too short for windows of {length} states"
        )
    starts = np.arange(0, trajectory.shape[0] - length + 1, stride)
    return np.stack([trajectory[s:s + length] for s in starts])


# -- standardization --------------------------------------------------------


def standardize(ds: Dataset) -> Tuple[Dataset, Standardization]:
    """Zero-mean, unit-scale copy of ``ds`` and the transform that produced it."""
    if len(ds) < 2:
        raise DomainError("standardization needs at least two rows")
    mean = ds.rows.mean(axis=0)
    scale = ds.rows.std(axis=0)
    flat = np.flatnonzero(scale <= 0.0)
    if flat.size:
        raise DomainError(f"column {int(flat[0])} of '{ds.name}' has zero variance")
    transform = Standardization(mean=mean, scale=scale)
    return Dataset(name=ds.name, rows=transform.apply(ds.rows), standardization=transform), transform


def destandardize(x: np.ndarray, transform: Standardization) -> np.ndarray:
    return transform.invert(x)


# -- persistence ------------------------------------------------------------


def _header(dim: int, name: str, rows: int) -> str:
    return f"dim={dim},name={name},rows={rows}\n"


def write_dataset(ds: Dataset, path: Union[str, Path]) -> Path:
    """Write ``ds`` as a headed CSV file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(ds.dim, ds.name, len(ds)))
        pd.DataFrame(ds.rows).to_csv(fh, header=False, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(ds)} rows of '{ds.name}' to {path}")
    return path


def write_trajectory(trajectory: np.ndarray, path: Union[str, Path], name: str) -> Path:
    """Write a (T, d) trajectory with a leading step column."""
    trajectory = np.asarray(trajectory, dtype=np.float64)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(trajectory)
    frame.insert(0, "step", np.arange(trajectory.shape[0]))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(trajectory.shape[1], name, trajectory.shape[0]))
        frame.to_csv(fh, header=False, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {trajectory.shape[0]}-step trajectory '{name}' to {path}")
    return path


def _parse_header(line: str) -> Dict[str, str]:
    try:
        fields = dict(item.split("=", 1) for item in line.strip().split(","))
        int(fields["dim"])
        int(fields["rows"])
        fields["name"]
    except (ValueError, KeyError):
        raise DataFormatError(f"malformed dataset header: {line.strip()!r}") from None
    return fields


def read_dataset(path: Union[str, Path]) -> Dataset:
    """Read a dataset or trajectory file; the step column is dropped."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        meta = _parse_header(fh.readline())
    dim, rows = int(meta["dim"]), int(meta["rows"])
    try:
        frame = pd.read_csv(path, skiprows=1, header=None, dtype=np.float64, float_precision="round_trip")
    except (ValueError, pd.errors.ParserError) as e:
        raise DataFormatError(f"{path}: cannot parse rows: {e}") from e
    values = frame.to_numpy(dtype=np.float64)
    if values.shape[1] == dim + 1:
        values = values[:, 1:]
    if values.shape != (rows, dim):
        raise DataFormatError(f"{path}: header declares {rows}x{dim}, file holds {values.shape}")
    return Dataset(name=meta["name"], rows=values)
