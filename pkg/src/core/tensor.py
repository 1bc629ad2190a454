"""
Dense float64 tensors and a reverse-mode differentiation graph.

A ``Graph`` is a static program: named inputs, constants and operation nodes
appended in topological order. ``forward_eval`` binds tensors to the inputs,
evaluates every node once and keeps the activations on the graph instance;
``backward_grad`` walks the nodes in reverse and fills the gradient buffers of
the bound leaves that require them. A graph instance holds activations, so it
must stay on one thread while it is evaluated.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from src.core.errors import (
    GraphStateError,
    NonFiniteError,
    ShapeMismatchError,
)

ArrayLike = Union[np.ndarray, Sequence[float], float]


class OpKind(str, Enum):
    """Operations a graph node can perform."""
    INPUT = "input"
    CONST = "const"
    MATMUL = "matmul"
    ADD = "add"
    MUL = "mul"
    AFFINE = "affine"
    TANH = "tanh"
    SILU = "silu"
    SUM = "sum"
    MEAN = "mean"
    SQUARE = "square"
    CONCAT = "concat"
    SLICE = "slice"


@dataclass
class Tensor:
    """A dense float64 array with an optional gradient buffer."""
    data: np.ndarray
    requires_grad: bool = False
    grad: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("leaf tensor contains NaN or Inf")
        self.data = data
        if self.grad is not None and np.shape(self.grad) != data.shape:
            raise ShapeMismatchError(
                f"grad shape {np.shape(self.grad)} does not match data shape {data.shape}"
            )

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def copy(self) -> "Tensor":
        grad = None if self.grad is None else self.grad.copy()
        return Tensor(self.data.copy(), requires_grad=self.requires_grad, grad=grad)


@dataclass(frozen=True)
class Node:
    """One operation record of a graph."""
    id: int
    op: OpKind
    inputs: Tuple[int, ...] = ()
    name: Optional[str] = None
    attrs: Dict[str, Any] = field(default_factory=dict)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


class Graph:
    """A topologically ordered program of tensor operations."""

    def __init__(self) -> None:
        self.nodes: List[Node] = []
        self.output: Optional[int] = None
        self._inputs: Dict[str, int] = {}
        self._constants: Dict[int, np.ndarray] = {}
        self._values: Dict[int, np.ndarray] = {}
        self._needs_grad: Dict[int, bool] = {}
        self._bound: Dict[str, Tensor] = {}

    # -- construction -----------------------------------------------------

    def _add(self, op: OpKind, inputs: Tuple[int, ...] = (), name: Optional[str] = None, **attrs: Any) -> int:
        node_id = len(self.nodes)
        for parent in inputs:
            if not 0 <= parent < node_id:
                raise GraphStateError(f"node {node_id}: input {parent} does not precede it")
        self.nodes.append(Node(id=node_id, op=op, inputs=inputs, name=name, attrs=attrs))
        return node_id

    def input(self, name: str) -> int:
        if name in self._inputs:
            raise GraphStateError(f"input '{name}' declared twice")
        node_id = self._add(OpKind.INPUT, name=name)
        self._inputs[name] = node_id
        return node_id

    def constant(self, value: ArrayLike) -> int:
        node_id = self._add(OpKind.CONST)
        self._constants[node_id] = np.asarray(value, dtype=np.float64)
        return node_id

    def matmul(self, a: int, b: int) -> int:
        return self._add(OpKind.MATMUL, (a, b))

    def add(self, a: int, b: int) -> int:
        return self._add(OpKind.ADD, (a, b))

    def mul(self, a: int, b: int) -> int:
        return self._add(OpKind.MUL, (a, b))

    def affine(self, x: int, weight: int, bias: int) -> int:
        return self._add(OpKind.AFFINE, (x, weight, bias))

    def tanh(self, a: int) -> int:
        return self._add(OpKind.TANH, (a,))

    def silu(self, a: int) -> int:
        return self._add(OpKind.SILU, (a,))

    def sum(self, a: int, axis: Optional[int] = None, keepdims: bool = False) -> int:
        return self._add(OpKind.SUM, (a,), axis=axis, keepdims=keepdims)

    def mean(self, a: int, axis: Optional[int] = None, keepdims: bool = False) -> int:
        return self._add(OpKind.MEAN, (a,), axis=axis, keepdims=keepdims)

    def square(self, a: int) -> int:
        return self._add(OpKind.SQUARE, (a,))

    def concat(self, parts: Sequence[int], axis: int = -1) -> int:
        return self._add(OpKind.CONCAT, tuple(parts), axis=axis)

    def slice(self, a: int, start: int, stop: int) -> int:
        """Slice ``[start:stop]`` along the last axis."""
        return self._add(OpKind.SLICE, (a,), start=start, stop=stop)

    # Composite helpers, built only from the primitive set above.

    def sub(self, a: int, b: int) -> int:
        return self.add(a, self.scale(b, -1.0))

    def scale(self, a: int, factor: float) -> int:
        return self.mul(a, self.constant(factor))

    def set_output(self, node_id: int) -> None:
        if not 0 <= node_id < len(self.nodes):
            raise GraphStateError(f"unknown output node {node_id}")
        self.output = node_id

    @property
    def input_names(self) -> List[str]:
        return list(self._inputs)

    def value(self, node_id: int) -> np.ndarray:
        """Activation saved by the last forward pass."""
        if node_id not in self._values:
            raise GraphStateError(f"node {node_id} has no value; run forward_eval first")
        return self._values[node_id]

    # -- evaluation -------------------------------------------------------

    def _eval_node(self, node: Node) -> np.ndarray:
        args = [self._values[i] for i in node.inputs]
        op = node.op
        if op is OpKind.MATMUL:
            a, b = args
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
                raise ShapeMismatchError(f"matmul of {a.shape} and {b.shape}", node.id)
            return a @ b
        if op in (OpKind.ADD, OpKind.MUL):
            a, b = args
            try:
                np.broadcast_shapes(a.shape, b.shape)
            except ValueError:
                raise ShapeMismatchError(f"{op.value} of {a.shape} and {b.shape}", node.id) from None
            return a + b if op is OpKind.ADD else a * b
        if op is OpKind.AFFINE:
            x, w, b = args
            if x.ndim != 2 or w.ndim != 2 or b.ndim != 1 or x.shape[1] != w.shape[0] or b.shape[0] != w.shape[1]:
                raise ShapeMismatchError(f"affine of x{x.shape}, W{w.shape}, b{b.shape}", node.id)
            return x @ w + b
        if op is OpKind.TANH:
            return np.tanh(args[0])
        if op is OpKind.SILU:
            return args[0] * expit(args[0])
        if op in (OpKind.SUM, OpKind.MEAN):
            (a,) = args
            axis = node.attrs["axis"]
            if axis is not None and not -a.ndim <= axis < a.ndim:
                raise ShapeMismatchError(f"{op.value} over axis {axis} of {a.shape}", node.id)
            reduce = np.sum if op is OpKind.SUM else np.mean
            return np.asarray(reduce(a, axis=axis, keepdims=node.attrs["keepdims"]), dtype=np.float64)
        if op is OpKind.SQUARE:
            return args[0] * args[0]
        if op is OpKind.CONCAT:
            axis = node.attrs["axis"]
            try:
                return np.concatenate(args, axis=axis)
            except ValueError:
                shapes = [a.shape for a in args]
                raise ShapeMismatchError(f"concat of {shapes} on axis {axis}", node.id) from None
        if op is OpKind.SLICE:
            (a,) = args
            start, stop = node.attrs["start"], node.attrs["stop"]
            if a.ndim < 1 or not 0 <= start < stop <= a.shape[-1]:
                raise ShapeMismatchError(f"slice [{start}:{stop}] of {a.shape}", node.id)
            return a[..., start:stop].copy()
        raise GraphStateError(f"node {node.id}: cannot evaluate op {op}")

    def _grad_node(self, node: Node, grad: np.ndarray) -> List[Optional[np.ndarray]]:
        args = [self._values[i] for i in node.inputs]
        out = self._values[node.id]
        op = node.op
        if op is OpKind.MATMUL:
            a, b = args
            return [grad @ b.T, a.T @ grad]
        if op is OpKind.ADD:
            a, b = args
            return [_unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)]
        if op is OpKind.MUL:
            a, b = args
            return [_unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)]
        if op is OpKind.AFFINE:
            x, w, _ = args
            return [grad @ w.T, x.T @ grad, grad.sum(axis=0)]
        if op is OpKind.TANH:
            return [grad * (1.0 - out * out)]
        if op is OpKind.SILU:
            x = args[0]
            s = expit(x)
            return [grad * (s * (1.0 + x * (1.0 - s)))]
        if op is OpKind.SUM:
            (a,) = args
            return [_expand_reduced(grad, a.shape, node.attrs["axis"], node.attrs["keepdims"]).copy()]
        if op is OpKind.MEAN:
            (a,) = args
            axis = node.attrs["axis"]
            count = a.size if axis is None else a.shape[axis]
            expanded = _expand_reduced(grad, a.shape, axis, node.attrs["keepdims"])
            return [expanded / count]
        if op is OpKind.SQUARE:
            return [2.0 * args[0] * grad]
        if op is OpKind.CONCAT:
            axis = node.attrs["axis"]
            bounds = np.cumsum([a.shape[axis] for a in args])[:-1]
            return list(np.split(grad, bounds, axis=axis))
        if op is OpKind.SLICE:
            (a,) = args
            full = np.zeros_like(a)
            full[..., node.attrs["start"]:node.attrs["stop"]] = grad
            return [full]
        raise GraphStateError(f"node {node.id}: cannot differentiate op {op}")


def _as_tensor(value: Union[Tensor, ArrayLike]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=np.float64))


def forward_eval(graph: Graph, inputs: Mapping[str, Union[Tensor, ArrayLike]], output: Optional[int] = None) -> Tensor:
    """Evaluate ``graph`` with the named inputs bound and return the output tensor."""
    output = graph.output if output is None else output
    if output is None:
        raise GraphStateError("graph has no output node")
    unknown = set(inputs) - set(graph._inputs)
    if unknown:
        raise GraphStateError(f"unknown inputs: {sorted(unknown)}")
    missing = [name for name in graph._inputs if name not in inputs]
    if missing:
        raise GraphStateError(f"unbound inputs: {missing}")

    graph._values = {}
    graph._needs_grad = {}
    graph._bound = {name: _as_tensor(value) for name, value in inputs.items()}

    for node in graph.nodes:
        if node.op is OpKind.INPUT:
            tensor = graph._bound[node.name]  # type: ignore[index]
            graph._values[node.id] = tensor.data
            graph._needs_grad[node.id] = tensor.requires_grad
            continue
        if node.op is OpKind.CONST:
            graph._values[node.id] = graph._constants[node.id]
            graph._needs_grad[node.id] = False
            continue
        value = graph._eval_node(node)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{node.op.value} produced non-finite values", node.id)
        graph._values[node.id] = value
        graph._needs_grad[node.id] = any(graph._needs_grad[i] for i in node.inputs)

    return Tensor(graph._values[output].copy())


def backward_grad(graph: Graph, output: Optional[int] = None) -> Dict[str, Tensor]:
    """Back-propagate from a scalar output; returns gradients keyed by input name."""
    output = graph.output if output is None else output
    if output is None or output not in graph._values:
        raise GraphStateError("backward_grad called before forward_eval")
    if graph._values[output].size != 1:
        raise GraphStateError(f"backward needs a scalar output, got shape {graph._values[output].shape}")

    grads: Dict[int, np.ndarray] = {output: np.ones_like(graph._values[output])}
    for node in reversed(graph.nodes[: output + 1]):
        grad = grads.pop(node.id, None)
        if node.op is OpKind.INPUT:
            if grad is not None:
                grads[node.id] = grad
            continue
        if grad is None or node.op is OpKind.CONST or not graph._needs_grad.get(node.id, False):
            continue
        for parent, parent_grad in zip(node.inputs, graph._grad_node(node, grad)):
            if parent_grad is None or not graph._needs_grad[parent]:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + parent_grad
            else:
                grads[parent] = np.asarray(parent_grad, dtype=np.float64)

    result: Dict[str, Tensor] = {}
    for name, node_id in graph._inputs.items():
        tensor = graph._bound[name]
        if not tensor.requires_grad:
            continue
        grad = grads.get(node_id)
        tensor.grad = np.zeros_like(tensor.data) if grad is None else np.array(grad, dtype=np.float64).reshape(tensor.shape)
        result[name] = Tensor(tensor.grad.copy())
    return result
