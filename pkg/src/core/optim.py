"""
Adam optimizer over named parameter tensors.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Union

import numpy as np

from src.core.errors import ConfigurationError, ShapeMismatchError
from src.core.tensor import Tensor


@dataclass
class AdamState:
    """Moment buffers and hyperparameters of one Adam run."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr < 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigurationError("Adam betas must lie in [0, 1)")


def adam_step(
    params: Dict[str, Tensor],
    grads: Mapping[str, Union[Tensor, np.ndarray]],
    state: AdamState,
) -> Dict[str, Tensor]:
    """Apply one bias-corrected Adam update to ``params`` in place and return them."""
    if set(params) != set(grads):
        raise ShapeMismatchError(
            f"gradients {sorted(grads)} are not aligned with parameters {sorted(params)}"
        )
    for name, param in params.items():
        grad_shape = np.shape(grads[name].data if isinstance(grads[name], Tensor) else grads[name])
        if grad_shape != param.shape:
            raise ShapeMismatchError(f"gradient for '{name}' has shape {grad_shape}, parameter has {param.shape}")

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for name, param in params.items():
        raw = grads[name]
        grad = raw.data if isinstance(raw, Tensor) else np.asarray(raw, dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        param.data = param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params
