"""
Dense float64 matrices with a reverse-mode tape.

Every operation takes `Node`s (or anything `as_matrix` accepts, which becomes a
constant) and returns a new `Node`. Calling `backward` on a 1x1 node walks the
graph once in reverse topological order and returns the gradients of every
named leaf.

Random streams come from `make_rng`, a numpy PCG64 generator. PCG64 keeps a
128-bit integer state advanced as

    state' = state * 0x2360ED051FC65DA44385DF649FCCF645 + inc   (mod 2**128)

and emits `rotr64(hi(state') ^ lo(state'), hi(state') >> 58)`; the stream is a
pure integer recurrence and therefore identical on every platform.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping
from enum import Enum

import numpy as np
import numpy.typing as npt
from loguru import logger
from scipy.special import expit

from ucf.errors import ContractError, ShapeError

Matrix = npt.NDArray[np.float64]

NORM_EPS = 1e-12


class OpKind(str, Enum):
    LEAF = "leaf"
    MATMUL = "matmul"
    ADD = "add"
    SUB = "sub"
    HADAMARD = "hadamard"
    SCALE = "scale"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    EXP = "exp"
    LOG = "log"
    RELU = "relu"
    SOFTMAX_ROWS = "softmax-rows"
    L2NORM_ROWS = "l2norm-rows"
    MEAN_ROWS = "mean-rows"
    SUM = "sum"
    CONCAT_COLS = "concat-cols"
    CONCAT_ROWS = "concat-rows"
    TRANSPOSE = "transpose"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def as_matrix(x) -> Matrix:
    """
    Coerce scalars, vectors and nested lists to a C-contiguous 2-D float64 array.
    A 1-D input becomes a single row.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


class Node:
    """One value on the tape plus the closure that pushes its gradient to its inputs."""

    __slots__ = ("op", "inputs", "value", "grad", "name", "requires_grad", "_backward")

    def __init__(
        self,
        value: Matrix,
        op: OpKind = OpKind.LEAF,
        inputs: tuple[Node, ...] = (),
        backward_fn: Callable[[Matrix], tuple[Matrix | None, ...]] | None = None,
        name: str | None = None,
        requires_grad: bool = False,
    ):
        self.value = value
        self.op = op
        self.inputs = inputs
        self.grad: Matrix | None = None
        self.name = name
        self.requires_grad = requires_grad
        self._backward = backward_fn

    @classmethod
    def leaf(cls, value, name: str) -> Node:
        return cls(as_matrix(value).copy(), name=name, requires_grad=True)

    @classmethod
    def constant(cls, value) -> Node:
        return cls(as_matrix(value))

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return hadamard(self, other)

    def __repr__(self):
        return f"Node(op={self.op.value}, shape={self.shape}, name={self.name})"


def _node(x) -> Node:
    return x if isinstance(x, Node) else Node.constant(x)


def _make(value: Matrix, op: OpKind, inputs: tuple[Node, ...], backward_fn) -> Node:
    needs = any(n.requires_grad for n in inputs)
    return Node(value, op, inputs, backward_fn if needs else None, requires_grad=needs)


def _broadcast_shape(a: Node, b: Node, op: OpKind) -> tuple[int, int]:
    (ar, ac), (br, bc) = a.shape, b.shape
    rows_ok = ar == br or ar == 1 or br == 1
    cols_ok = ac == bc or ac == 1 or bc == 1
    if not (rows_ok and cols_ok):
        raise ShapeError(f"{op.value}: cannot broadcast {a.shape} with {b.shape}")
    return max(ar, br), max(ac, bc)


def _unbroadcast(grad: Matrix, shape: tuple[int, int]) -> Matrix:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def matmul(a, b) -> Node:
    a, b = _node(a), _node(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    av, bv = a.value, b.value

    def backward_fn(g):
        return g @ bv.T, av.T @ g

    return _make(av @ bv, OpKind.MATMUL, (a, b), backward_fn)


def add(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_shape(a, b, OpKind.ADD)
    sa, sb = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make(a.value + b.value, OpKind.ADD, (a, b), backward_fn)


def sub(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_shape(a, b, OpKind.SUB)
    sa, sb = a.shape, b.shape

    def backward_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make(a.value - b.value, OpKind.SUB, (a, b), backward_fn)


def hadamard(a, b) -> Node:
    a, b = _node(a), _node(b)
    _broadcast_shape(a, b, OpKind.HADAMARD)
    av, bv = a.value, b.value

    def backward_fn(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make(av * bv, OpKind.HADAMARD, (a, b), backward_fn)


def scale(a, c: float) -> Node:
    a = _node(a)

    def backward_fn(g):
        return (g * c,)

    return _make(a.value * c, OpKind.SCALE, (a,), backward_fn)


def tanh(a) -> Node:
    a = _node(a)
    y = np.tanh(a.value)

    def backward_fn(g):
        return (g * (1.0 - y * y),)

    return _make(y, OpKind.TANH, (a,), backward_fn)


def sigmoid(a) -> Node:
    a = _node(a)
    y = expit(a.value)

    def backward_fn(g):
        return (g * y * (1.0 - y),)

    return _make(y, OpKind.SIGMOID, (a,), backward_fn)


def exp(a) -> Node:
    a = _node(a)
    y = np.exp(a.value)

    def backward_fn(g):
        return (g * y,)

    return _make(y, OpKind.EXP, (a,), backward_fn)


def log(a) -> Node:
    a = _node(a)
    x = a.value

    def backward_fn(g):
        return (g / x,)

    return _make(np.log(x), OpKind.LOG, (a,), backward_fn)


def relu(a) -> Node:
    a = _node(a)
    mask = (a.value > 0.0).astype(np.float64)

    def backward_fn(g):
        return (g * mask,)

    return _make(a.value * mask, OpKind.RELU, (a,), backward_fn)


def softmax_rows_array(m) -> Matrix:
    m = as_matrix(m)
    e = np.exp(m - m.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def l2_normalize_rows_array(m) -> Matrix:
    return l2_normalize_rows(m).value


def softmax_rows(a) -> Node:
    a = _node(a)
    y = softmax_rows_array(a.value)

    def backward_fn(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _make(y, OpKind.SOFTMAX_ROWS, (a,), backward_fn)


def l2_normalize_rows(a) -> Node:
    """
    Scale every row to unit Euclidean norm. Rows with norm below 1e-12 map to zero rows.
    """
    a = _node(a)
    norms = np.sqrt((a.value * a.value).sum(axis=1, keepdims=True))
    live = norms >= NORM_EPS
    safe = np.where(live, norms, 1.0)
    y = np.where(live, a.value / safe, 0.0)

    def backward_fn(g):
        gi = (g - y * (g * y).sum(axis=1, keepdims=True)) / safe
        return (np.where(live, gi, 0.0),)

    return _make(y, OpKind.L2NORM_ROWS, (a,), backward_fn)


def mean_rows(a) -> Node:
    """Column means over the rows: (r, c) -> (1, c)."""
    a = _node(a)
    rows = a.shape[0]

    def backward_fn(g):
        return (np.broadcast_to(g / rows, (rows, g.shape[1])).copy(),)

    return _make(a.value.mean(axis=0, keepdims=True), OpKind.MEAN_ROWS, (a,), backward_fn)


def sum_all(a) -> Node:
    a = _node(a)
    shape = a.shape

    def backward_fn(g):
        return (np.full(shape, g[0, 0]),)

    return _make(np.array([[a.value.sum()]]), OpKind.SUM, (a,), backward_fn)


def concat_cols(parts: Iterable) -> Node:
    nodes = tuple(_node(p) for p in parts)
    rows = {n.shape[0] for n in nodes}
    if len(rows) != 1:
        raise ShapeError(f"concat-cols: row counts differ {[n.shape for n in nodes]}")
    bounds = np.cumsum([0] + [n.shape[1] for n in nodes])

    def backward_fn(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(nodes)))

    value = np.concatenate([n.value for n in nodes], axis=1)
    return _make(value, OpKind.CONCAT_COLS, nodes, backward_fn)


def concat_rows(parts: Iterable) -> Node:
    nodes = tuple(_node(p) for p in parts)
    cols = {n.shape[1] for n in nodes}
    if len(cols) != 1:
        raise ShapeError(f"concat-rows: column counts differ {[n.shape for n in nodes]}")
    bounds = np.cumsum([0] + [n.shape[0] for n in nodes])

    def backward_fn(g):
        return tuple(g[bounds[i] : bounds[i + 1], :] for i in range(len(nodes)))

    value = np.concatenate([n.value for n in nodes], axis=0)
    return _make(value, OpKind.CONCAT_ROWS, nodes, backward_fn)


def transpose(a) -> Node:
    a = _node(a)

    def backward_fn(g):
        return (g.T,)

    return _make(np.ascontiguousarray(a.value.T), OpKind.TRANSPOSE, (a,), backward_fn)


def _topological_order(output: Node) -> list[Node]:
    order: list[Node] = []
    visited: set[int] = set()
    stack: list[tuple[Node, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.inputs:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(output: Node) -> dict[str, Matrix]:
    """
    Propagate d(output)/d(node) through the graph.

    Returns:
        Mapping from leaf name to its accumulated gradient, for every named
        leaf that reaches `output`.
    """
    if output.shape != (1, 1):
        raise ContractError(f"backward needs a scalar (1x1) output, got {output.shape}")
    if not output.requires_grad:
        return {}
    order = _topological_order(output)
    if any(n.grad is not None for n in order):
        raise ContractError("stale gradients on the tape; call zero_grad before a second backward")

    output.grad = np.ones((1, 1))
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        for parent, g in zip(node.inputs, node._backward(node.grad)):
            if not parent.requires_grad:
                continue
            parent.grad = g.copy() if parent.grad is None else parent.grad + g

    return {
        n.name: n.grad
        for n in order
        if n.op is OpKind.LEAF and n.name is not None and n.grad is not None
    }


def zero_grad(output: Node) -> None:
    for node in _topological_order(output):
        node.grad = None


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, Node]], Node],
    params: Mapping[str, Matrix],
    eps: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """
    Compare tape gradients with central differences.

    Args:
        loss_fn: builds a 1x1 loss node from a mapping of parameter nodes.
        params: parameter values by name.
        eps: central-difference step.
        max_entries: if given, check this many randomly chosen entries per
            parameter instead of all of them.

    Returns:
        max_i |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)
    """
    if eps <= 0:
        raise ContractError(f"finite difference step must be positive, got {eps}")
    params = {k: as_matrix(v) for k, v in params.items()}
    grads = backward(loss_fn({k: Node.leaf(v, k) for k, v in params.items()}))
    rng = make_rng(seed)

    def evaluate(name: str, flat: int, delta: float) -> float:
        shifted = {k: v.copy() for k, v in params.items()}
        shifted[name].flat[flat] += delta
        return float(loss_fn({k: Node.constant(v) for k, v in shifted.items()}).value[0, 0])

    worst = 0.0
    for name, value in params.items():
        g_ad = grads.get(name, np.zeros_like(value))
        indices = np.arange(value.size)
        if max_entries is not None and value.size > max_entries:
            indices = np.sort(rng.choice(value.size, size=max_entries, replace=False))
        for flat in indices:
            g_fd = (evaluate(name, flat, eps) - evaluate(name, flat, -eps)) / (2.0 * eps)
            ad = float(g_ad.flat[flat])
            err = abs(ad - g_fd) / max(1e-8, abs(ad) + abs(g_fd))
            worst = max(worst, err)
    logger.debug("finite difference check: max relative error {:.3e}", worst)
    return worst
