"""
Exception hierarchy for the IDFF toolkit.
"""

from typing import Optional


class IDFFError(Exception):
    """Base class for every error raised by the toolkit."""


class ConfigurationError(IDFFError, ValueError):
    """Unknown names, strategies or configuration keys."""


class ShapeMismatchError(IDFFError, ValueError):
    """Operand shapes are incompatible for an operation."""

    def __init__(self, message: str, node_id: Optional[int] = None):
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)
        self.node_id = node_id


class DimensionMismatchError(IDFFError, ValueError):
    """Vectors that must share a dimension do not."""


class BatchSizeError(IDFFError, ValueError):
    """Batch sizes differ or exceed a solver bound."""


class OrderMismatchError(IDFFError, ValueError):
    """The solver order K of two components disagrees."""


class DomainError(IDFFError, ValueError):
    """An argument lies outside the domain of an operation."""


class SingularityError(DomainError):
    """Evaluation too close to the t = 1 singularity."""


class ZeroBandwidthError(DomainError):
    """A Gaussian bandwidth of zero where a positive one is required."""


class GraphStateError(IDFFError, RuntimeError):
    """The graph is not in a state that allows the requested pass."""


class NumericalError(IDFFError, ArithmeticError):
    """Base class for numerical aborts (CLI exit code 3)."""


class NonFiniteError(NumericalError):
    """A NaN or Inf was produced or supplied."""

    def __init__(self, message: str, node_id: Optional[int] = None):
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)
        self.node_id = node_id


class DivergenceError(NumericalError):
    """Training or integration blew up."""


class CheckpointError(IDFFError):
    """A checkpoint could not be read or has an incompatible version."""


class DataFormatError(IDFFError, OSError):
    """A dataset or trajectory file does not follow the expected layout."""
