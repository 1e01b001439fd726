"""Reverse-mode automatic differentiation over dense float64 arrays.

A computation graph is built once from named input placeholders and constant
nodes, evaluated with :func:`forward`, and differentiated with
:func:`backward`. The op set is intentionally small: exactly what the
encoder/decoder networks and the clustering/fairness objectives need
(2-d matrix products, bias addition, elementwise maps, row-wise softmax and
L2 normalization, full reductions, row selection). Shapes are inferred and
checked at build time so a malformed graph fails before any numerics run.

All arrays are float64. Gradients are accumulated in a fixed reverse
topological order, so repeated runs are bitwise reproducible.
"""

from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)

# Clamp used by the guarded log inside entropy expressions. With probabilities
# clamped at this floor, 0 * log(clamp) evaluates to exactly 0.0.
GUARD_EPS = 1e-12

# Inputs to elementwise exp beyond this overflow float64.
_EXP_LIMIT = 709.0


class GraphError(ValueError):
    """Malformed graph, shape mismatch, missing binding, or domain violation."""


class Node:
    """One vertex of a computation graph.

    ``value`` is populated by :func:`forward` and ``grad`` by
    :func:`backward`. Nodes are plain records; all numeric state lives in
    numpy arrays. Do not mutate a node's value in place.
    """

    __slots__ = ("op", "parents", "name", "shape", "factor", "indices", "value", "grad", "cache")

    def __init__(self, op, parents=(), name=None, shape=None, factor=None, indices=None):
        self.op = op
        self.parents = tuple(parents)
        self.name = name          # input nodes only
        self.shape = shape        # inferred at build time for every node
        self.factor = factor      # scale nodes only
        self.indices = indices    # select_rows nodes only
        self.value = None
        self.grad = None
        self.cache = None         # op-specific forward intermediates

    def __repr__(self):
        tag = f" '{self.name}'" if self.name is not None else ""
        return f"<Node {self.op}{tag} shape={self.shape}>"


def _as_shape(shape):
    if shape is None:
        raise GraphError("input nodes must declare a shape")
    return tuple(int(s) for s in shape)


def input_node(name: str, shape) -> Node:
    """Named placeholder; bound to an array of exactly `shape` at forward time."""
    if not name:
        raise GraphError("input nodes need a non-empty name")
    return Node("input", name=name, shape=_as_shape(shape))


def constant(value) -> Node:
    """Input with a fixed binding (centers, one-hot maps, ones rows, scalars)."""
    arr = np.asarray(value, dtype=np.float64)
    node = Node("const", shape=arr.shape)
    node.value = arr
    return node


def _binary_shapes(op, a: Node, b: Node):
    if a.shape == b.shape:
        return a.shape
    raise GraphError(f"{op} needs matching shapes, got {a.shape} vs {b.shape} at {a!r}")


def matmul(a: Node, b: Node) -> Node:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise GraphError(f"matmul needs (m,k)x(k,n) 2-d operands, got {a.shape} x {b.shape}")
    return Node("matmul", (a, b), shape=(a.shape[0], b.shape[1]))


def add(a: Node, b: Node) -> Node:
    """Elementwise sum; also accepts matrix + 1-d bias over the last axis."""
    if len(a.shape) == 2 and len(b.shape) == 1 and b.shape[0] == a.shape[1]:
        return Node("add_bias", (a, b), shape=a.shape)
    return Node("add", (a, b), shape=_binary_shapes("add", a, b))


def subtract(a: Node, b: Node) -> Node:
    return Node("subtract", (a, b), shape=_binary_shapes("subtract", a, b))


def multiply(a: Node, b: Node) -> Node:
    return Node("multiply", (a, b), shape=_binary_shapes("multiply", a, b))


def tanh(a: Node) -> Node:
    return Node("tanh", (a,), shape=a.shape)


def exp(a: Node) -> Node:
    return Node("exp", (a,), shape=a.shape)


def log(a: Node) -> Node:
    """Natural log. Rejects non-positive entries at forward time."""
    return Node("log", (a,), shape=a.shape)


def log_guarded(a: Node) -> Node:
    """log(max(x, GUARD_EPS)): the clamped log used inside entropy sums."""
    return Node("log_guarded", (a,), shape=a.shape)


def softmax_rows(a: Node) -> Node:
    if len(a.shape) != 2:
        raise GraphError(f"softmax_rows needs a 2-d operand, got shape {a.shape}")
    return Node("softmax_rows", (a,), shape=a.shape)


def normalize_rows(a: Node) -> Node:
    """Row-wise L2 normalization; zero rows get a uniform 1e-12 jitter first."""
    if len(a.shape) != 2:
        raise GraphError(f"normalize_rows needs a 2-d operand, got shape {a.shape}")
    return Node("normalize_rows", (a,), shape=a.shape)


def sum_all(a: Node) -> Node:
    return Node("sum", (a,), shape=())


def mean_all(a: Node) -> Node:
    return Node("mean", (a,), shape=())


def scale(a: Node, factor: float) -> Node:
    """Multiply by a python constant (not a graph value)."""
    f = float(factor)
    if not np.isfinite(f):
        raise GraphError("scale factor must be finite")
    return Node("scale", (a,), shape=a.shape, factor=f)


def square(a: Node) -> Node:
    return Node("square", (a,), shape=a.shape)


def select_rows(a: Node, indices) -> Node:
    """Gather rows by a fixed index list (decoder routing, batch slicing)."""
    if len(a.shape) != 2:
        raise GraphError(f"select_rows needs a 2-d operand, got shape {a.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise GraphError("select_rows indices must be 1-d")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise GraphError(f"select_rows indices out of range for {a.shape[0]} rows")
    return Node("select_rows", (a,), shape=(int(idx.size), a.shape[1]), indices=idx)


def topo_order(root: Node) -> list[Node]:
    """Ancestors-first ordering of the graph below `root` (deterministic)."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node in seen:
            continue
        seen.add(node)
        stack.append((node, True))
        for parent in node.parents:
            stack.append((parent, False))
    return order


def _compute(node: Node) -> np.ndarray:
    vals = [p.value for p in node.parents]
    op = node.op
    if op == "matmul":
        return vals[0] @ vals[1]
    if op == "add":
        return vals[0] + vals[1]
    if op == "add_bias":
        return vals[0] + vals[1][None, :]
    if op == "subtract":
        return vals[0] - vals[1]
    if op == "multiply":
        return vals[0] * vals[1]
    if op == "tanh":
        return np.tanh(vals[0])
    if op == "exp":
        if np.any(np.abs(vals[0]) > _EXP_LIMIT):
            raise GraphError(f"exp overflow at {node!r}")
        return np.exp(vals[0])
    if op == "log":
        if np.any(vals[0] <= 0.0):
            raise GraphError(f"log of non-positive value at {node!r}")
        return np.log(vals[0])
    if op == "log_guarded":
        return np.log(np.maximum(vals[0], GUARD_EPS))
    if op == "softmax_rows":
        shifted = vals[0] - vals[0].max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    if op == "normalize_rows":
        x = vals[0]
        norms = np.sqrt((x * x).sum(axis=1))
        zero = norms == 0.0
        if zero.any():
            logger.warning("normalize_rows: %d zero-norm rows jittered by %g", int(zero.sum()), GUARD_EPS)
            x = x.copy()
            x[zero] += GUARD_EPS
            norms = np.sqrt((x * x).sum(axis=1))
        node.cache = norms
        return x / norms[:, None]
    if op == "sum":
        return np.asarray(vals[0].sum())
    if op == "mean":
        return np.asarray(vals[0].mean())
    if op == "scale":
        return vals[0] * node.factor
    if op == "square":
        return vals[0] * vals[0]
    if op == "select_rows":
        return vals[0][node.indices]
    raise GraphError(f"unknown op {op!r}")


def forward(root: Node, inputs: dict[str, np.ndarray] | None = None) -> np.ndarray:
    """Evaluate the graph below `root` with the given input bindings.

    Every input node in the graph must have a binding of exactly its declared
    shape; extra bindings are ignored. Returns the root value.
    """
    inputs = inputs or {}
    for node in topo_order(root):
        if node.op == "input":
            if node.name not in inputs:
                raise GraphError(f"missing binding for {node!r}")
            val = np.asarray(inputs[node.name], dtype=np.float64)
            if val.shape != node.shape:
                raise GraphError(
                    f"binding shape {val.shape} does not match declared {node.shape} at {node!r}"
                )
            if not np.all(np.isfinite(val)):
                raise GraphError(f"non-finite binding at {node!r}")
            node.value = val
        elif node.op == "const":
            pass
        else:
            node.value = _compute(node)
    return root.value


def _accumulate(node: Node):
    g = node.grad
    ps = node.parents
    op = node.op
    if op == "matmul":
        ps[0].grad += g @ ps[1].value.T
        ps[1].grad += ps[0].value.T @ g
    elif op == "add":
        ps[0].grad += g
        ps[1].grad += g
    elif op == "add_bias":
        ps[0].grad += g
        ps[1].grad += g.sum(axis=0)
    elif op == "subtract":
        ps[0].grad += g
        ps[1].grad -= g
    elif op == "multiply":
        ps[0].grad += g * ps[1].value
        ps[1].grad += g * ps[0].value
    elif op == "tanh":
        ps[0].grad += g * (1.0 - node.value * node.value)
    elif op == "exp":
        ps[0].grad += g * node.value
    elif op == "log":
        ps[0].grad += g / ps[0].value
    elif op == "log_guarded":
        x = ps[0].value
        ps[0].grad += g * np.where(x > GUARD_EPS, 1.0 / np.maximum(x, GUARD_EPS), 0.0)
    elif op == "softmax_rows":
        y = node.value
        inner = (g * y).sum(axis=1, keepdims=True)
        ps[0].grad += y * (g - inner)
    elif op == "normalize_rows":
        y = node.value
        norms = node.cache
        inner = (g * y).sum(axis=1, keepdims=True)
        ps[0].grad += (g - y * inner) / norms[:, None]
    elif op == "sum":
        ps[0].grad += g  # scalar broadcast over the operand
    elif op == "mean":
        ps[0].grad += g / ps[0].value.size
    elif op == "scale":
        ps[0].grad += g * node.factor
    elif op == "square":
        ps[0].grad += 2.0 * ps[0].value * g
    elif op == "select_rows":
        np.add.at(ps[0].grad, node.indices, g)


def backward(root: Node) -> dict[str, np.ndarray]:
    """Backpropagate from a scalar root; returns gradients for every input node.

    forward() must have run on this graph first. Gradients are also stored on
    each node's ``grad`` field.
    """
    if root.value is None:
        raise GraphError("backward before forward: root has no value")
    if root.value.shape != ():
        raise GraphError(f"backward needs a scalar root, got shape {root.value.shape}")
    order = topo_order(root)
    for node in order:
        node.grad = np.zeros(node.value.shape)
    root.grad = np.ones(())
    for node in reversed(order):
        if node.parents:
            _accumulate(node)
    return {node.name: node.grad for node in order if node.op == "input"}


def grad_check(scalar_fn, point: np.ndarray, step: float) -> float:
    """Compare an analytic gradient against central finite differences.

    `scalar_fn(x)` must return `(value, grad)` with `grad` shaped like `x`.
    Returns max over coordinates of |analytic - central| / max(1, |central|).
    """
    if step <= 0.0:
        raise GraphError("grad_check step must be positive")
    point = np.asarray(point, dtype=np.float64)
    _, grad = scalar_fn(point)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != point.shape:
        raise GraphError(f"gradient shape {grad.shape} does not match point {point.shape}")
    flat = point.ravel()
    gflat = grad.ravel()
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + step
        plus = float(scalar_fn(bumped.reshape(point.shape))[0])
        bumped[i] = flat[i] - step
        minus = float(scalar_fn(bumped.reshape(point.shape))[0])
        central = (plus - minus) / (2.0 * step)
        if not np.isfinite(central):
            raise GraphError(f"non-finite finite-difference at coordinate {i}")
        err = abs(gflat[i] - central) / max(1.0, abs(central))
        if err > worst:
            worst = err
    return worst
