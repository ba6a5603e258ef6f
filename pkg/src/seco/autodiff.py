"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Values are plain ``numpy`` arrays (the tensor type); a :class:`Node` wraps one
value together with its parents and the rule that maps the output gradient to
parent gradients.  There is no broadcasting: every binary op requires exactly
matching shapes.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

EPS_NORM = 1e-12
_TINY = float(np.finfo(np.float64).smallest_subnormal)


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateVectorError(ValueError):
    """A vector is too short to normalize."""


# ops whose backward rule is deliberately sign-flipped (checker sanity tests)
_FAULTY: set[str] = set()


@contextlib.contextmanager
def inject_fault(op: str) -> Iterator[None]:
    """Negate the backward rule of ``op`` while the context is active."""
    _FAULTY.add(op)
    try:
        yield
    finally:
        _FAULTY.discard(op)


class Node:
    __slots__ = ("value", "parents", "backward_fn", "grad", "requires_grad", "op")

    def __init__(self, value, parents: tuple = (), backward_fn=None, op: str = "leaf",
                 requires_grad: bool = True):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other: Node) -> Node:
        return add(self, other)

    def __sub__(self, other: Node) -> Node:
        return sub(self, other)

    def __mul__(self, c: float) -> Node:
        return scale(self, c)

    __rmul__ = __mul__


def leaf(value) -> Node:
    """A trainable input."""
    return Node(np.array(value, dtype=np.float64, copy=True))


def constant(value) -> Node:
    """An input that never receives gradient."""
    return Node(value, requires_grad=False, op="const")


def as_node(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def stop_gradient(x) -> Node:
    """Same value as ``x``, cut off from the graph."""
    return constant(x.value if isinstance(x, Node) else x)


def _make(value, parents: Sequence[Node], backward_fn, op: str) -> Node:
    needs = any(p.requires_grad for p in parents)
    return Node(value, tuple(parents), backward_fn if needs else None, op, requires_grad=needs)


def _check_same(op: str, a: Node, b: Node) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# ops


def linear(x, W, bias) -> Node:
    """``x @ W + bias`` for ``x`` of shape (n, a), ``W`` (a, b), ``bias`` (b,)."""
    x, W, bias = as_node(x), as_node(W), as_node(bias)
    if x.value.ndim != 2 or W.value.ndim != 2 or bias.value.ndim != 1:
        raise ShapeError(f"linear: expected 2-d x, 2-d W, 1-d bias; got {x.shape}, {W.shape}, {bias.shape}")
    if x.shape[1] != W.shape[0]:
        raise ShapeError(f"linear: x {x.shape} and W {W.shape} have mismatched inner dimensions")
    if bias.shape[0] != W.shape[1]:
        raise ShapeError(f"linear: bias {bias.shape} does not match W {W.shape}")
    out = x.value @ W.value + bias.value

    def backward(g):
        return g @ W.value.T, x.value.T @ g, g.sum(axis=0)

    return _make(out, (x, W, bias), backward, "linear")


def relu(x) -> Node:
    x = as_node(x)
    mask = x.value > 0.0

    def backward(g):
        return (g * mask,)

    return _make(np.where(mask, x.value, 0.0), (x,), backward, "relu")


def l2_normalize(x) -> Node:
    """Unit-normalize a vector, or each row of a matrix."""
    x = as_node(x)
    if x.value.ndim not in (1, 2):
        raise ShapeError(f"l2_normalize: expected 1-d or 2-d input, got {x.shape}")
    norm = np.sqrt(np.sum(x.value * x.value, axis=-1, keepdims=True))
    if np.any(norm < EPS_NORM):
        raise DegenerateVectorError(f"l2_normalize: norm {float(norm.min()):.3e} below {EPS_NORM:g}")
    y = x.value / norm

    def backward(g):
        # (I - y y^T) g / |x|
        return ((g - y * np.sum(g * y, axis=-1, keepdims=True)) / norm,)

    return _make(y, (x,), backward, "l2_normalize")


def dot(a, b) -> Node:
    """Inner product of two vectors; row-wise for two (n, d) matrices."""
    a, b = as_node(a), as_node(b)
    _check_same("dot", a, b)
    if a.value.ndim not in (1, 2):
        raise ShapeError(f"dot: expected 1-d or 2-d inputs, got {a.shape}")
    out = np.sum(a.value * b.value, axis=-1)

    def backward(g):
        g = np.expand_dims(g, -1)
        return g * b.value, g * a.value

    return _make(out, (a, b), backward, "dot")


def concat(parts: Sequence, axis: int = -1) -> Node:
    if not parts:
        raise ValueError("concat: empty list of parts")
    parts = [as_node(p) for p in parts]
    values = [p.value for p in parts]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: incompatible shapes {[p.shape for p in parts]}") from exc
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, parts, backward, "concat")


def reshape(x, shape: tuple[int, ...]) -> Node:
    x = as_node(x)
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return _make(x.value.reshape(shape), (x,), backward, "reshape")


def select(x, index: int) -> Node:
    """Column ``index`` of the last axis."""
    x = as_node(x)

    def backward(g):
        full = np.zeros_like(x.value)
        full[..., index] = g
        return (full,)

    return _make(x.value[..., index], (x,), backward, "select")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    # keep the open interval (0, 1) on the underflow side
    return np.maximum(out, _TINY)


def sigmoid(x) -> Node:
    x = as_node(x)
    s = _sigmoid(np.atleast_1d(x.value)).reshape(x.shape)

    def backward(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), backward, "sigmoid")


def softplus(x) -> Node:
    """``log(1 + exp(x))`` without overflow."""
    x = as_node(x)
    v = x.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))

    def backward(g):
        return (g * _sigmoid(np.atleast_1d(v)).reshape(v.shape),)

    return _make(out, (x,), backward, "softplus")


def logsumexp(x) -> Node:
    """Max-shifted log-sum-exp over the last axis."""
    x = as_node(x)
    m = np.max(x.value, axis=-1, keepdims=True)
    e = np.exp(x.value - m)
    s = np.sum(e, axis=-1, keepdims=True)
    out = (np.log(s) + m)[..., 0]

    def backward(g):
        return (np.expand_dims(g, -1) * (e / s),)

    return _make(out, (x,), backward, "logsumexp")


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same("add", a, b)
    return _make(a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_same("sub", a, b)
    return _make(a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a, b) -> Node:
    """Elementwise product."""
    a, b = as_node(a), as_node(b)
    _check_same("mul", a, b)

    def backward(g):
        return g * b.value, g * a.value

    return _make(a.value * b.value, (a, b), backward, "mul")


def scale(x, c: float) -> Node:
    x = as_node(x)
    c = float(c)
    return _make(x.value * c, (x,), lambda g: (g * c,), "scale")


def total(x) -> Node:
    """Sum of all entries, as a scalar."""
    x = as_node(x)
    return _make(np.sum(x.value), (x,), lambda g: (np.full(x.shape, g),), "sum")


def mean(x) -> Node:
    x = as_node(x)
    n = x.value.size
    return _make(np.sum(x.value) / n, (x,), lambda g: (np.full(x.shape, g / n),), "mean")


# ---------------------------------------------------------------------------
# backward pass


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(loss: Node) -> dict[Node, np.ndarray]:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node.

    Returns the gradients of the reachable trainable leaves.  Gradients add
    up across calls; reset with :func:`zero_grad`.
    """
    if loss.value.shape != ():
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.shape}")
    order = _topological(loss)
    upstream = {id(loss): np.ones((), dtype=np.float64)}
    leaves: dict[Node, np.ndarray] = {}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            if node.requires_grad:
                node.grad = node.grad + g
                leaves[node] = node.grad
            continue
        grads = node.backward_fn(g)
        if node.op in _FAULTY:
            grads = tuple(-pg for pg in grads)
        for parent, pg in zip(node.parents, grads):
            if not parent.requires_grad:
                continue
            key = id(parent)
            upstream[key] = upstream[key] + pg if key in upstream else pg
    return leaves


def zero_grad(nodes: Iterable[Node]) -> None:
    for n in nodes:
        n.grad = np.zeros_like(n.value)


def grad(loss: Node, wrt: Sequence[Node]) -> list[np.ndarray]:
    """Gradients of ``loss`` for each node in ``wrt`` (zeros if unreachable)."""
    zero_grad(wrt)
    backward(loss)
    return [n.grad.copy() for n in wrt]


# ---------------------------------------------------------------------------
# finite-difference checker


def relative_error(a, n) -> np.ndarray:
    a, n = np.asarray(a), np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def numerical_grad(f: Callable[[list[Node]], Node], theta: Sequence[np.ndarray],
                   step: float = 1e-5) -> list[np.ndarray]:
    """Central differences of ``f`` with respect to every coordinate of ``theta``."""
    base = [np.array(t, dtype=np.float64) for t in theta]
    out = []
    for i, t in enumerate(base):
        g = np.zeros_like(t)
        flat, gflat = t.reshape(-1), g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            hi = float(f([constant(b) for b in base]).value)
            flat[j] = orig - step
            lo = float(f([constant(b) for b in base]).value)
            flat[j] = orig
            gflat[j] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def grad_check(f: Callable[[list[Node]], Node], theta: Sequence[np.ndarray],
               step: float = 1e-5, tol: float = 1e-4) -> dict:
    """Compare analytic and central-difference gradients of ``f`` at ``theta``.

    ``f`` maps a list of nodes (one per parameter array) to a scalar node.
    Returns ``{"errors": [max rel err per parameter], "worst": (param, flat
    index), "passed": bool}``.
    """
    leaves = [leaf(t) for t in theta]
    analytic = grad(f(leaves), leaves)
    numeric = numerical_grad(f, theta, step)
    errors, worst, worst_err = [], (0, 0), -1.0
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        if a.size == 0:
            errors.append(0.0)
            continue
        rel = relative_error(a, n).reshape(-1)
        j = int(np.argmax(rel))
        errors.append(float(rel[j]))
        if rel[j] > worst_err:
            worst, worst_err = (i, j), float(rel[j])
    return {"errors": errors, "worst": worst, "passed": all(e < tol for e in errors)}
