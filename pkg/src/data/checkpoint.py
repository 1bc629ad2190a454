"""
Checkpoint persistence.

A checkpoint is a JSON document holding the format version, the model, path
and gamma configuration and every parameter array as a list of base-ten
literals. Python's float repr round-trips exactly, so load(save(m)) restores
the parameters bitwise.
"""

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
from pydantic import ValidationError

from src.config.settings import settings
from src.core.errors import CheckpointError
from src.data.models import Checkpoint, GammaSchedule, ParamArray, PathConfig
from src.flow.network import IDFFNet
from src.utils.logging import get_logger

logger = get_logger(__name__)


def checkpoint_from_model(
    model: IDFFNet, path: Optional[PathConfig] = None, gamma: Optional[GammaSchedule] = None
) -> Checkpoint:
    params = {
        name: ParamArray(shape=list(value.shape), data=value.ravel().tolist())
        for name, value in model.state_dict().items()
    }
    return Checkpoint(
        format_version=settings.CHECKPOINT_FORMAT_VERSION,
        model=model.config,
        path=path or model.path,
        gamma=gamma or GammaSchedule(),
        params=params,
    )


def model_from_checkpoint(ckpt: Checkpoint) -> IDFFNet:
    """Rebuild the network stored in ``ckpt``."""
    model = IDFFNet(ckpt.model, seed=0, path=ckpt.path)
    state = {name: np.asarray(p.data, dtype=np.float64).reshape(p.shape) for name, p in ckpt.params.items()}
    try:
        model.load_state_dict(state)
    except ValueError as e:
        raise CheckpointError(f"checkpoint parameters do not match its model config: {e}") from e
    return model


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(ckpt.model_dump(mode="json"), indent=1), encoding="utf-8")
    logger.info(f"Saved checkpoint ({len(ckpt.params)} arrays) to {path}")
    return path


def load_checkpoint(path: Union[str, Path], expected_version: Optional[str] = None) -> Checkpoint:
    """Read a checkpoint, refusing other format versions."""
    path = Path(path)
    expected = expected_version or settings.CHECKPOINT_FORMAT_VERSION
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path} is not a checkpoint: {e}") from e

    version = payload.get("format_version") if isinstance(payload, dict) else None
    if version != expected:
        raise CheckpointError(f"{path} has format version {version!r}, expected {expected!r}")
    try:
        return Checkpoint.model_validate(payload)
    except ValidationError as e:
        raise CheckpointError(f"{path} holds an invalid checkpoint: {e}") from e
