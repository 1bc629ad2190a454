"""
Tests for the tensor graph, the Adam optimizer and the seeded generators.
"""

from typing import Callable, Dict, Tuple

import numpy as np
import pytest

from src.core.errors import ConfigurationError, GraphStateError, NonFiniteError, ShapeMismatchError
from src.core.optim import AdamState, adam_step
from src.core.rng import child_seed, make_rng, spawn
from src.core.tensor import Graph, Tensor, backward_grad, forward_eval

Builder = Callable[[Graph, Dict[str, int]], int]

# op name -> (input shapes, builder returning the op's node)
OP_CASES: Dict[str, Tuple[Dict[str, Tuple[int, ...]], Builder]] = {
    "matmul": ({"a": (3, 4), "b": (4, 2)}, lambda g, n: g.matmul(n["a"], n["b"])),
    "add_broadcast": ({"a": (3, 4), "b": (4,)}, lambda g, n: g.add(n["a"], n["b"])),
    "mul_broadcast": ({"a": (3, 4), "b": (1, 4)}, lambda g, n: g.mul(n["a"], n["b"])),
    "affine": ({"x": (3, 4), "w": (4, 2), "b": (2,)}, lambda g, n: g.affine(n["x"], n["w"], n["b"])),
    "tanh": ({"a": (3, 4)}, lambda g, n: g.tanh(n["a"])),
    "silu": ({"a": (3, 4)}, lambda g, n: g.silu(n["a"])),
    "sum_axis": ({"a": (3, 4)}, lambda g, n: g.sum(n["a"], axis=1)),
    "sum_all": ({"a": (3, 4)}, lambda g, n: g.sum(n["a"])),
    "mean_keepdims": ({"a": (3, 4)}, lambda g, n: g.mean(n["a"], axis=0, keepdims=True)),
    "square": ({"a": (3, 4)}, lambda g, n: g.square(n["a"])),
    "concat": ({"a": (3, 2), "b": (3, 3)}, lambda g, n: g.concat([n["a"], n["b"]], axis=-1)),
    "slice": ({"a": (3, 5)}, lambda g, n: g.slice(n["a"], 1, 4)),
    "sub": ({"a": (3, 4), "b": (3, 4)}, lambda g, n: g.sub(n["a"], n["b"])),
}


def _scalar_graph(shapes: Dict[str, Tuple[int, ...]], build: Builder, rng) -> Tuple[Graph, Dict[str, np.ndarray]]:
    """Wrap an op as sum(op(inputs) * W) with a fixed random W."""
    g = Graph()
    nodes = {name: g.input(name) for name in shapes}
    values = {name: rng.standard_normal(shape) for name, shape in shapes.items()}
    out = build(g, nodes)
    probe = forward_eval(g, values, output=out)
    weight = g.constant(rng.standard_normal(probe.shape))
    g.set_output(g.sum(g.mul(out, weight)))
    return g, values


def _numeric_grad(g: Graph, values: Dict[str, np.ndarray], name: str, h: float = 1e-6) -> np.ndarray:
    grad = np.zeros_like(values[name])
    for index in np.ndindex(values[name].shape):
        shifted = {k: v.copy() for k, v in values.items()}
        shifted[name][index] += h
        up = forward_eval(g, shifted).data.item()
        shifted[name][index] -= 2 * h
        down = forward_eval(g, shifted).data.item()
        grad[index] = (up - down) / (2 * h)
    return grad


class TestGradients:
    """Analytic gradients against central finite differences."""

    @pytest.mark.parametrize("op", sorted(OP_CASES))
    def test_matches_finite_differences(self, op):
        shapes, build = OP_CASES[op]
        for instance in range(20):
            rng = make_rng(instance)
            g, values = _scalar_graph(shapes, build, rng)
            tensors = {k: Tensor(v, requires_grad=True) for k, v in values.items()}
            forward_eval(g, tensors)
            grads = backward_grad(g)
            for name in shapes:
                numeric = _numeric_grad(g, values, name)
                np.testing.assert_allclose(grads[name].data, numeric, rtol=1e-4, atol=1e-7)
                np.testing.assert_array_equal(tensors[name].grad, grads[name].data)

    def test_leaf_without_requires_grad_gets_nothing(self, rng):
        g = Graph()
        a, b = g.input("a"), g.input("b")
        g.set_output(g.sum(g.mul(a, b)))
        fixed = Tensor(rng.standard_normal(3))
        learned = Tensor(rng.standard_normal(3), requires_grad=True)
        forward_eval(g, {"a": fixed, "b": learned})
        grads = backward_grad(g)
        assert set(grads) == {"b"}
        assert fixed.grad is None
        np.testing.assert_allclose(learned.grad, fixed.data)

    def test_reused_node_accumulates(self, rng):
        g = Graph()
        a = g.input("a")
        g.set_output(g.sum(g.add(a, a)))
        x = Tensor(rng.standard_normal(4), requires_grad=True)
        forward_eval(g, {"a": x})
        backward_grad(g)
        np.testing.assert_allclose(x.grad, np.full(4, 2.0))


class TestGraphState:
    def test_backward_before_forward(self):
        g = Graph()
        g.set_output(g.sum(g.input("a")))
        with pytest.raises(GraphStateError):
            backward_grad(g)

    def test_backward_needs_scalar(self):
        g = Graph()
        g.set_output(g.square(g.input("a")))
        forward_eval(g, {"a": Tensor(np.ones(3), requires_grad=True)})
        with pytest.raises(GraphStateError):
            backward_grad(g)

    def test_unbound_and_unknown_inputs(self):
        g = Graph()
        g.set_output(g.sum(g.input("a")))
        with pytest.raises(GraphStateError):
            forward_eval(g, {})
        with pytest.raises(GraphStateError):
            forward_eval(g, {"a": np.ones(2), "z": np.ones(2)})

    def test_duplicate_input_name(self):
        g = Graph()
        g.input("a")
        with pytest.raises(GraphStateError):
            g.input("a")

    def test_value_before_forward(self):
        g = Graph()
        node = g.input("a")
        with pytest.raises(GraphStateError):
            g.value(node)

    def test_forward_keeps_activations(self, rng):
        g = Graph()
        a = g.input("a")
        hidden = g.tanh(a)
        g.set_output(g.sum(hidden))
        x = rng.standard_normal(5)
        out = forward_eval(g, {"a": x})
        np.testing.assert_allclose(g.value(hidden), np.tanh(x))
        assert out.data.item() == pytest.approx(np.tanh(x).sum())


class TestErrors:
    def test_shape_mismatch_names_node(self):
        g = Graph()
        a, b = g.input("a"), g.input("b")
        bad = g.matmul(a, b)
        g.set_output(g.sum(bad))
        with pytest.raises(ShapeMismatchError) as info:
            forward_eval(g, {"a": np.ones((2, 3)), "b": np.ones((2, 3))})
        assert info.value.node_id == bad

    def test_non_finite_leaf(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0, np.nan]))

    def test_non_finite_activation_names_node(self):
        g = Graph()
        a = g.input("a")
        blown = g.square(a)
        g.set_output(g.sum(blown))
        with pytest.raises(NonFiniteError) as info:
            forward_eval(g, {"a": np.array([1e200])})
        assert info.value.node_id == blown

    def test_bad_slice(self):
        g = Graph()
        g.set_output(g.sum(g.slice(g.input("a"), 2, 9)))
        with pytest.raises(ShapeMismatchError):
            forward_eval(g, {"a": np.ones((2, 4))})


class TestAdam:
    def test_minimizes_quadratic(self):
        target = np.array([1.0, -2.0, 0.5])
        params = {"w": Tensor(np.zeros(3), requires_grad=True)}
        state = AdamState(lr=0.05)
        for _ in range(600):
            grad = 2.0 * (params["w"].data - target)
            adam_step(params, {"w": grad}, state)
        np.testing.assert_allclose(params["w"].data, target, atol=1e-2)
        assert state.step == 600

    def test_first_step_moves_by_lr(self):
        params = {"w": Tensor(np.array([0.0, 0.0]), requires_grad=True)}
        adam_step(params, {"w": np.array([3.0, -0.5])}, AdamState(lr=0.1))
        np.testing.assert_allclose(params["w"].data, [-0.1, 0.1], rtol=1e-6)

    def test_misaligned_gradients(self):
        params = {"w": Tensor(np.zeros(2), requires_grad=True)}
        with pytest.raises(ShapeMismatchError):
            adam_step(params, {"v": np.zeros(2)}, AdamState())
        with pytest.raises(ShapeMismatchError):
            adam_step(params, {"w": np.zeros(3)}, AdamState())

    def test_rejects_bad_hyperparameters(self):
        with pytest.raises(ConfigurationError):
            AdamState(lr=-1.0)
        with pytest.raises(ConfigurationError):
            AdamState(beta1=1.0)


class TestRng:
    def test_same_seed_same_stream(self):
        np.testing.assert_array_equal(make_rng(5).standard_normal(8), make_rng(5).standard_normal(8))

    def test_spawned_streams_differ(self):
        a, b = spawn(5, 2)
        assert not np.array_equal(a.standard_normal(8), b.standard_normal(8))

    def test_spawn_is_reproducible(self):
        first = [g.random(4) for g in spawn(11, 3)]
        second = [g.random(4) for g in spawn(11, 3)]
        for x, y in zip(first, second):
            np.testing.assert_array_equal(x, y)

    def test_child_seed_range(self, rng):
        seeds = [child_seed(rng) for _ in range(50)]
        assert all(0 <= s < 2**31 - 1 for s in seeds)
