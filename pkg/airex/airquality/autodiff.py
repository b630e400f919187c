"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A :class:`Node` holds a value, the nodes it was computed from and one
vector-Jacobian product per parent. :func:`backward` walks the graph in reverse
topological order and accumulates ``grad`` on every reachable node. Only the
operations the inference network, its losses and the FNN baseline need are
provided; broadcasting follows numpy but is summed back on the way down.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable, Iterable, Sequence

import numpy as np

from airex.airquality.exceptions import ShapeError

Vjp = Callable[[np.ndarray], np.ndarray]

_node_ids = itertools.count()


class Node:
    __slots__ = ("id", "op", "parents", "value", "grad", "requires_grad", "name", "_vjps")

    def __init__(
        self,
        value: np.ndarray | float,
        op: str = "leaf",
        parents: Sequence[Node] = (),
        vjps: Sequence[Vjp] = (),
        requires_grad: bool | None = None,
        name: str | None = None,
    ) -> None:
        self.id = next(_node_ids)
        self.op = op
        self.parents = tuple(parents)
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.name = name
        self._vjps = tuple(vjps)

    def __repr__(self) -> str:
        label = f" {self.name}" if self.name else ""
        return f"<Node {self.id} {self.op}{label} shape={self.shape}>"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.value.reshape(-1)[0])

    def __add__(self, other: Node | float) -> Node:
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: Node | float) -> Node:
        return sub(self, other)

    def __rsub__(self, other: Node | float) -> Node:
        return sub(other, self)

    def __mul__(self, other: Node | float) -> Node:
        return hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> Node:
        return scale(self, -1.0)

    def __matmul__(self, other: Node) -> Node:
        return matmul(self, other)

    def __getitem__(self, index) -> Node:
        return getitem(self, index)


def parameter(value: np.ndarray | float, name: str | None = None) -> Node:
    return Node(np.array(value, dtype=np.float64), op="param", requires_grad=True, name=name)


def constant(value: np.ndarray | float) -> Node:
    return Node(value, op="const", requires_grad=False)


def as_node(x: Node | np.ndarray | float) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Node, b: Node) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a: Node | float, b: Node | float) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("add", a, b)
    return Node(
        a.value + b.value,
        "add",
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a: Node | float, b: Node | float) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("sub", a, b)
    return Node(
        a.value - b.value,
        "sub",
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: -_unbroadcast(g, b.shape)),
    )


def hadamard(a: Node | float, b: Node | float) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape("hadamard", a, b)
    return Node(
        a.value * b.value,
        "hadamard",
        (a, b),
        (
            lambda g: _unbroadcast(g * b.value, a.shape),
            lambda g: _unbroadcast(g * a.value, b.shape),
        ),
    )


def matmul(a: Node, b: Node) -> Node:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        value = np.matmul(a.value, b.value)
    except ValueError:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None
    return Node(
        value,
        "matmul",
        (a, b),
        (
            lambda g: _unbroadcast(np.matmul(g, np.swapaxes(b.value, -1, -2)), a.shape),
            lambda g: _unbroadcast(np.matmul(np.swapaxes(a.value, -1, -2), g), b.shape),
        ),
    )


def concat(nodes: Sequence[Node], axis: int = -1) -> Node:
    """Concatenation along ``axis``, the feature axis by default."""
    nodes = [as_node(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: no inputs")
    ndim = nodes[0].ndim
    axis = axis % ndim if ndim else 0
    for n in nodes:
        if n.ndim != ndim or any(
            n.shape[i] != nodes[0].shape[i] for i in range(ndim) if i != axis
        ):
            raise ShapeError(
                f"concat: incompatible shapes {[m.shape for m in nodes]} on axis {axis}"
            )
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def _piece(i: int) -> Vjp:
        return lambda g: np.split(g, bounds, axis=axis)[i]

    return Node(
        np.concatenate([n.value for n in nodes], axis=axis),
        "concat",
        nodes,
        [_piece(i) for i in range(len(nodes))],
    )


def sigmoid(x: Node) -> Node:
    # tanh form avoids overflow in exp for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return Node(y, "sigmoid", (x,), (lambda g: g * y * (1.0 - y),))


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return Node(y, "tanh", (x,), (lambda g: g * (1.0 - y * y),))


def relu(x: Node) -> Node:
    mask = x.value > 0
    return Node(np.where(mask, x.value, 0.0), "relu", (x,), (lambda g: g * mask,))


def softmax(x: Node, axis: int = -1) -> Node:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return Node(
        y,
        "softmax",
        (x,),
        (lambda g: y * (g - (g * y).sum(axis=axis, keepdims=True)),),
    )


def exp(x: Node) -> Node:
    y = np.exp(x.value)
    return Node(y, "exp", (x,), (lambda g: g * y,))


def log(x: Node) -> Node:
    return Node(np.log(x.value), "log", (x,), (lambda g: g / x.value,))


def square(x: Node) -> Node:
    return Node(x.value * x.value, "square", (x,), (lambda g: 2.0 * g * x.value,))


def xlogx(x: Node) -> Node:
    """x * log(x) elementwise with 0 * log(0) = 0."""
    positive = x.value > 0
    safe = np.where(positive, x.value, 1.0)
    y = np.where(positive, x.value * np.log(safe), 0.0)
    return Node(
        y, "xlogx", (x,), (lambda g: np.where(positive, g * (np.log(safe) + 1.0), 0.0),)
    )


def _expand(g: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is not None:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


def sum(x: Node, axis: int | None = None) -> Node:  # noqa: A001
    return Node(
        x.value.sum(axis=axis), "sum", (x,), (lambda g: _expand(g, x.shape, axis),)
    )


def mean(x: Node, axis: int | None = None) -> Node:
    count = x.value.size if axis is None else x.shape[axis]
    if count == 0:
        raise ShapeError(f"mean: empty input of shape {x.shape}")
    return Node(
        x.value.mean(axis=axis),
        "mean",
        (x,),
        (lambda g: _expand(g, x.shape, axis) / count,),
    )


def scale(x: Node, c: float) -> Node:
    return Node(x.value * c, "scale", (x,), (lambda g: g * c,))


def getitem(x: Node, index) -> Node:
    def _vjp(g: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x.value)
        np.add.at(out, index, g)
        return out

    return Node(x.value[index], "getitem", (x,), (_vjp,))


def reshape(x: Node, shape: tuple[int, ...]) -> Node:
    try:
        value = x.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {shape}") from None
    return Node(value, "reshape", (x,), (lambda g: g.reshape(x.shape),))


def sqdist(a: Node, b: Node) -> Node:
    """Pairwise squared euclidean distances between the rows of two matrices.

    Computed from explicit differences, so identical rows give exactly 0.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"sqdist: incompatible shapes {a.shape} and {b.shape}")
    diff = a.value[:, None, :] - b.value[None, :, :]
    return Node(
        (diff * diff).sum(axis=-1),
        "sqdist",
        (a, b),
        (
            lambda g: 2.0 * (g[:, :, None] * diff).sum(axis=1),
            lambda g: -2.0 * (g[:, :, None] * diff).sum(axis=0),
        ),
    )


def topological_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.id in seen:
            continue
        seen.add(node.id)
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents if p.id not in seen)
    return order


def backward(root: Node) -> list[Node]:
    """Populate ``grad`` with d(root)/d(node) on every node reachable from root.

    Returns the reachable nodes in topological order (parents first).
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    order = topological_order(root)
    for node in order:
        node.grad = np.zeros_like(node.value)
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if not node.requires_grad or not node.parents:
            continue
        for parent, vjp in zip(node.parents, node._vjps):
            if parent.requires_grad:
                parent.grad = parent.grad + np.reshape(vjp(node.grad), parent.shape)
    return order


def finite_diff_check(
    f: Callable[[], Node],
    params: Iterable[Node],
    eps: float = 1e-5,
    floor: float = 1e-2,
    max_entries: int | None = None,
    seed: int = 0,
) -> float:
    """Largest relative error between backward gradients and central differences.

    ``f`` rebuilds the graph from the current parameter values on every call.
    The error of one coordinate is ``|a - n| / max(|a|, |n|, floor)``;
    ``max_entries`` samples that many coordinates per parameter.
    """
    params = list(params)
    root = f()
    backward(root)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params
    ]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        indices = list(np.ndindex(p.shape))
        if max_entries is not None and len(indices) > max_entries:
            picked = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(picked)]
        for idx in indices:
            original = p.value[idx]
            p.value[idx] = original + eps
            plus = f().item()
            p.value[idx] = original - eps
            minus = f().item()
            p.value[idx] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = float(grad[idx])
            error = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, error)
    return worst
