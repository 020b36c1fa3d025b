"""Define-then-run reverse-mode differentiation over 2-D float64 arrays.

A :class:`Graph` records nodes in creation order.  Leaves are named inputs
(data, never differentiated) or named parameters.  ``forward`` evaluates the
graph for a feed dict and ``backward`` returns adjoints of the root with
respect to every parameter leaf.

    g = Graph()
    x = g.param("x")
    f = g.mul(x, x)
    g.forward({"x": np.array([[3.0]])})   # [[9.]]
    g.backward()["x"]                     # [[6.]]
"""
from __future__ import annotations

from typing import Callable, Dict, Mapping, Optional, Sequence

import numpy as np

from .errors import GraphStateError, NonFiniteError, ShapeError

GradientSet = Dict[str, np.ndarray]

LAYER_NORM_EPS = 1e-5
BCE_CLAMP = 1e-7


class Node:
    __slots__ = ("graph", "index", "op", "parents", "attrs", "name", "value", "grad")

    def __init__(self, graph, index, op, parents=(), attrs=None, name=None):
        self.graph = graph
        self.index = index
        self.op = op
        self.parents = tuple(parents)
        self.attrs = attrs or {}
        self.name = name
        self.value = None
        self.grad = None

    @property
    def is_param(self):
        return self.op == "param"

    def __repr__(self):
        label = self.name or self.op
        return f"Node({self.index}, {label})"

    def __add__(self, other):
        return self.graph.add(self, other)

    def __mul__(self, other):
        return self.graph.mul(self, other)

    def __matmul__(self, other):
        return self.graph.matmul(self, other)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax_rows(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# Each op is (forward(node, *parent_values) -> value,
#             backward(node, grad, *parent_values) -> tuple of parent grads).

def _fwd_matmul(node, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _bwd_matmul(node, g, a, b):
    return g @ b.T, a.T @ g


def _check_broadcast(op, a, b):
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None
    return shape


def _fwd_add(node, a, b):
    _check_broadcast("add", a, b)
    return a + b


def _bwd_add(node, g, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _fwd_mul(node, a, b):
    _check_broadcast("mul", a, b)
    return a * b


def _bwd_mul(node, g, a, b):
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _fwd_scale(node, a):
    return a * node.attrs["factor"]


def _bwd_scale(node, g, a):
    return (g * node.attrs["factor"],)


def _fwd_relu(node, a):
    return np.maximum(a, 0.0)


def _bwd_relu(node, g, a):
    return (g * (a > 0),)


def _fwd_sigmoid(node, a):
    return _sigmoid(a)


def _bwd_sigmoid(node, g, a):
    s = node.value
    return (g * s * (1.0 - s),)


def _fwd_softmax(node, a):
    return _softmax_rows(a)


def _bwd_softmax(node, g, a):
    s = node.value
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),)


def _fwd_layer_norm(node, a):
    mu = a.mean(axis=1, keepdims=True)
    centered = a - mu
    inv_std = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + node.attrs["eps"])
    node.attrs["_inv_std"] = inv_std
    return centered * inv_std


def _bwd_layer_norm(node, g, a):
    xhat = node.value
    inv_std = node.attrs["_inv_std"]
    gx = inv_std * (
        g - g.mean(axis=1, keepdims=True) - xhat * (g * xhat).mean(axis=1, keepdims=True)
    )
    return (gx,)


def _fwd_embedding(node, table, idx):
    idx = np.asarray(idx)
    if idx.ndim != 1:
        raise ShapeError(f"embedding: index array must be 1-D, got shape {idx.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ShapeError(f"embedding: indices must be integers, got {idx.dtype}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(
            f"embedding: index out of range for table with {table.shape[0]} rows"
        )
    return table[idx]


def _bwd_embedding(node, g, table, idx):
    idx = np.asarray(idx)
    gt = np.empty_like(table)
    for j in range(table.shape[1]):
        gt[:, j] = np.bincount(idx, weights=g[:, j], minlength=table.shape[0])
    return gt, None


def _fwd_concat(node, *parts):
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError(f"concat: row counts differ {[p.shape for p in parts]}")
    return np.concatenate(parts, axis=1)


def _bwd_concat(node, g, *parts):
    out, start = [], 0
    for p in parts:
        stop = start + p.shape[1]
        out.append(g[:, start:stop])
        start = stop
    return tuple(out)


def _fwd_mean(node, a):
    return np.array([[a.mean()]])


def _bwd_mean(node, g, a):
    return (np.full(a.shape, g.item() / a.size),)


def _fwd_sum(node, a):
    return np.array([[a.sum()]])


def _bwd_sum(node, g, a):
    return (np.full(a.shape, g.item()),)


def _fwd_log(node, a):
    if np.any(a <= 0):
        raise NonFiniteError("log: non-positive argument")
    return np.log(a)


def _bwd_log(node, g, a):
    return (g / a,)


def _fwd_bce(node, p, y):
    if p.shape != y.shape:
        raise ShapeError(f"bce: predictions {p.shape} vs labels {y.shape}")
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))


def _bwd_bce(node, g, p, y):
    pc = np.clip(p, BCE_CLAMP, 1.0 - BCE_CLAMP)
    inside = (p > BCE_CLAMP) & (p < 1.0 - BCE_CLAMP)
    return (g * inside * (pc - y) / (pc * (1.0 - pc)), None)


OPS: Dict[str, tuple] = {
    "matmul": (_fwd_matmul, _bwd_matmul),
    "add": (_fwd_add, _bwd_add),
    "mul": (_fwd_mul, _bwd_mul),
    "scale": (_fwd_scale, _bwd_scale),
    "relu": (_fwd_relu, _bwd_relu),
    "sigmoid": (_fwd_sigmoid, _bwd_sigmoid),
    "softmax": (_fwd_softmax, _bwd_softmax),
    "layer_norm": (_fwd_layer_norm, _bwd_layer_norm),
    "embedding": (_fwd_embedding, _bwd_embedding),
    "concat": (_fwd_concat, _bwd_concat),
    "mean": (_fwd_mean, _bwd_mean),
    "sum": (_fwd_sum, _bwd_sum),
    "log": (_fwd_log, _bwd_log),
    "bce": (_fwd_bce, _bwd_bce),
}

# Ops whose second operand is never differentiated.
_NON_DIFF_OPERAND = {"embedding": 1, "bce": 1}


class Graph:
    """An acyclic expression graph; nodes are kept in creation order."""

    def __init__(self):
        self.nodes = []
        self._leaves = {}
        self._evaluated = False

    # -- construction -------------------------------------------------------
    def _leaf(self, name, op):
        if name in self._leaves:
            raise ValueError(f"duplicate leaf name {name!r}")
        node = Node(self, len(self.nodes), op, name=name)
        self.nodes.append(node)
        self._leaves[name] = node
        return node

    def input(self, name) -> Node:
        return self._leaf(name, "input")

    def param(self, name) -> Node:
        return self._leaf(name, "param")

    def _op(self, op, *parents, **attrs) -> Node:
        for p in parents:
            if not isinstance(p, Node) or p.graph is not self:
                raise ValueError(f"{op}: operand is not a node of this graph")
        node = Node(self, len(self.nodes), op, parents, attrs)
        self.nodes.append(node)
        self._evaluated = False
        return node

    def matmul(self, a, b):
        return self._op("matmul", a, b)

    def add(self, a, b):
        return self._op("add", a, b)

    def mul(self, a, b):
        return self._op("mul", a, b)

    def scale(self, a, factor: float):
        return self._op("scale", a, factor=float(factor))

    def relu(self, a):
        return self._op("relu", a)

    def sigmoid(self, a):
        return self._op("sigmoid", a)

    def softmax(self, a):
        return self._op("softmax", a)

    def layer_norm(self, a, eps=LAYER_NORM_EPS):
        return self._op("layer_norm", a, eps=eps)

    def embedding(self, table, idx):
        return self._op("embedding", table, idx)

    def concat(self, parts: Sequence[Node]):
        return self._op("concat", *parts)

    def mean(self, a):
        return self._op("mean", a)

    def sum(self, a):
        return self._op("sum", a)

    def log(self, a):
        return self._op("log", a)

    def bce(self, p, y):
        return self._op("bce", p, y)

    def dense(self, x, weight, bias):
        return self.add(self.matmul(x, weight), bias)

    # -- evaluation ---------------------------------------------------------
    @property
    def root(self) -> Node:
        if not self.nodes:
            raise GraphStateError("empty graph")
        return self.nodes[-1]

    @property
    def param_names(self):
        return [n.name for n in self.nodes if n.is_param]

    def forward(self, feeds: Mapping[str, np.ndarray], root: Optional[Node] = None):
        """Evaluate every node; returns the value held at ``root`` (last node by default)."""
        for name, leaf in self._leaves.items():
            if name not in feeds:
                raise ShapeError(f"{leaf.op} {name!r}: no value fed")
            value = feeds[name]
            if leaf.is_param:
                value = np.asarray(value, dtype=np.float64)
            else:
                value = np.asarray(value)
            leaf.value = value
            leaf.grad = None
        for node in self.nodes:
            node.grad = None
            if node.op in ("input", "param"):
                continue
            fwd = OPS[node.op][0]
            value = fwd(node, *(p.value for p in node.parents))
            if not np.all(np.isfinite(value)):
                raise NonFiniteError(f"{node.op}: non-finite output at node {node.index}")
            node.value = value
        self._evaluated = True
        return (root or self.root).value

    def backward(self, root: Optional[Node] = None) -> GradientSet:
        """Adjoints of ``sum(root)`` with respect to every parameter leaf."""
        if not self._evaluated:
            raise GraphStateError("backward called before forward")
        root = root or self.root
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.value, dtype=np.float64)
        for node in reversed(self.nodes[: root.index + 1]):
            if node.grad is None or not node.parents:
                continue
            bwd = OPS[node.op][1]
            parent_grads = bwd(node, node.grad, *(p.value for p in node.parents))
            skip = _NON_DIFF_OPERAND.get(node.op)
            for i, (parent, pg) in enumerate(zip(node.parents, parent_grads)):
                if i == skip or pg is None or parent.op == "input":
                    continue
                parent.grad = pg if parent.grad is None else parent.grad + pg
        return {
            n.name: (n.grad if n.grad is not None else np.zeros_like(n.value))
            for n in self.nodes
            if n.is_param
        }


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> GradientSet:
    """Rescale all adjoints together so their joint L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return {k: g.copy() for k, g in grads.items()}
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def numerical_gradient(
    fn: Callable[[Dict[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    name: str,
    index: tuple,
    h: float = 1e-5,
) -> float:
    """Central finite difference of ``fn`` in one coordinate of one parameter."""
    plus = {k: v.copy() for k, v in params.items()}
    minus = {k: v.copy() for k, v in params.items()}
    plus[name][index] += h
    minus[name][index] -= h
    return (fn(plus) - fn(minus)) / (2 * h)
