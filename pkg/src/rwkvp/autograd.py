"""Reverse-mode automatic differentiation over dense numpy arrays.

Design: a micrograd-style tape. Every op produces a new Tensor holding its
value, its parents and a closure that routes the upstream gradient to the
parents. Tensors are immutable once created, so several graphs may evaluate
concurrently over shared (read-only) parameters.

Precision: leaves are created with the module default dtype (float32 unless
switched); intermediate results follow numpy promotion, so casting the
leaves to float64 is enough to run a whole graph in double precision.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Raised when two operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """Raised (in debug mode) when a primitive produces NaN/Inf."""


_default_dtype = np.float32
_grad_enabled = True
_debug_checks = False
_node_ids = itertools.count()


def set_default_dtype(dtype) -> None:
    global _default_dtype
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _default_dtype = dtype


def get_default_dtype():
    return _default_dtype


@contextmanager
def double_precision():
    """Create leaves in float64 inside the block (gradient-check mode)."""
    global _default_dtype
    prev = _default_dtype
    _default_dtype = np.float64
    try:
        yield
    finally:
        _default_dtype = prev


@contextmanager
def no_grad():
    """Skip tape recording inside the block (inference/eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug(flag: bool) -> None:
    """Enable per-op finiteness checks (off by default: release speed)."""
    global _debug_checks
    _debug_checks = bool(flag)


class Tensor:
    """A dense array plus its position in the computation graph.

    Node ids increase monotonically as ops execute, so every node's parents
    have strictly smaller ids and the graph is acyclic by construction.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "node_id")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _op: str = "leaf"):
        if isinstance(data, np.ndarray) and (_op != "leaf" or data.dtype in (np.float32, np.float64)):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=_default_dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = None
        self.op = _op
        self.node_id = next(_node_ids)
        if _debug_checks and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite output from op '{_op}'")

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Reverse-accumulate d(self)/d(leaf) for every requires_grad leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar (scalar rhs allowed for * and +)
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _toposort(root: Tensor):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.sort(key=lambda n: n.node_id)
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(*tensors) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum the upstream gradient back down to a broadcast operand's shape."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "add")
    out = Tensor(a.data + b.data, _needs_grad(a, b), (a, b), "add")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.shape))
        out._backward = bwd
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "sub")
    out = Tensor(a.data - b.data, _needs_grad(a, b), (a, b), "sub")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g, b.shape))
        out._backward = bwd
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "mul")
    out = Tensor(a.data * b.data, _needs_grad(a, b), (a, b), "mul")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.shape))
        out._backward = bwd
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "div")
    out = Tensor(a.data / b.data, _needs_grad(a, b), (a, b), "div")
    if out.requires_grad:
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * out.data / b.data, b.shape))
        out._backward = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c, _needs_grad(a), (a,), "scale")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * c)
    return out


def exp(a: Tensor) -> Tensor:
    out = Tensor(np.exp(a.data), _needs_grad(a), (a,), "exp")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * out.data)
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data), _needs_grad(a), (a,), "log")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g / a.data)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = Tensor(1.0 / (1.0 + np.exp(-a.data)), _needs_grad(a), (a,), "sigmoid")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * out.data * (1.0 - out.data))
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), _needs_grad(a), (a,), "relu")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * (a.data > 0))
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, _needs_grad(a), (a,), "square")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g * 2.0 * a.data)
    return out


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "maximum")
    out = Tensor(np.maximum(a.data, b.data), _needs_grad(a, b), (a, b), "maximum")
    if out.requires_grad:
        mask = a.data >= b.data
        def bwd(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * mask, a.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * (~mask), b.shape))
        out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# linear algebra / shape primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim == 0 or b.data.ndim == 0:
        raise ShapeError("matmul: operands must be at least 1-D")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor(a.data @ b.data, _needs_grad(a, b), (a, b), "matmul")
    if out.requires_grad:
        def bwd(g):
            if a.data.ndim == 1 and b.data.ndim == 2:       # (d,) @ (d,k)
                if a.requires_grad:
                    a._accumulate(g @ b.data.T)
                if b.requires_grad:
                    b._accumulate(np.outer(a.data, g))
            elif a.data.ndim == 2 and b.data.ndim == 1:     # (t,d) @ (d,)
                if a.requires_grad:
                    a._accumulate(np.outer(g, b.data))
                if b.requires_grad:
                    b._accumulate(a.data.T @ g)
            else:                                           # (t,d) @ (d,k)
                if a.requires_grad:
                    a._accumulate(g @ b.data.T)
                if b.requires_grad:
                    b._accumulate(a.data.T @ g)
        out._backward = bwd
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T, _needs_grad(a), (a,), "transpose")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(g.T)
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: empty input list")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _needs_grad(*tensors), tuple(tensors), "concat")
    if out.requires_grad:
        sizes = [t.shape[axis] for t in tensors]
        splits = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
                if t.requires_grad:
                    t._accumulate(piece)
        out._backward = bwd
    return out


def sum_(a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum()), _needs_grad(a), (a,), "sum")
    if out.requires_grad:
        out._backward = lambda g: a._accumulate(np.broadcast_to(g, a.shape).copy())
    return out


def mean(a: Tensor, axis=None) -> Tensor:
    out = Tensor(np.asarray(a.data.mean(axis=axis)), _needs_grad(a), (a,), "mean")
    if out.requires_grad:
        count = a.data.size if axis is None else a.shape[axis]
        def bwd(g):
            if axis is None:
                a._accumulate(np.broadcast_to(g / count, a.shape).copy())
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy())
        out._backward = bwd
    return out


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(p, _needs_grad(a), (a,), "softmax")
    if out.requires_grad:
        def bwd(g):
            dot = (g * p).sum(axis=axis, keepdims=True)
            a._accumulate(p * (g - dot))
        out._backward = bwd
    return out


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis; constant rows map to the bias."""
    if a.shape[-1] != gain.shape[0] or gain.shape != bias.shape:
        raise ShapeError(f"layer_norm: shapes {a.shape}, {gain.shape}, {bias.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    xm = a.data - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = xm * invstd
    out = Tensor(xhat * gain.data + bias.data, _needs_grad(a, gain, bias),
                 (a, gain, bias), "layer_norm")
    if out.requires_grad:
        def bwd(g):
            if bias.requires_grad:
                bias._accumulate(_unbroadcast(g, bias.shape))
            if gain.requires_grad:
                gain._accumulate(_unbroadcast(g * xhat, gain.shape))
            if a.requires_grad:
                dxhat = g * gain.data
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                a._accumulate(invstd * (dxhat - m1 - xhat * m2))
        out._backward = bwd
    return out


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: out[t] = table[ids[t]]."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range [0, {table.shape[0]})")
    out = Tensor(table.data[ids], _needs_grad(table), (table,), "embed")
    if out.requires_grad:
        def bwd(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table._accumulate(gt)
        out._backward = bwd
    return out


def shift_rows(a: Tensor, first_row: np.ndarray) -> Tensor:
    """Shift rows down one step: out[0] = first_row, out[t] = a[t-1].

    first_row is carried state from the previous chunk; gradients do not
    propagate across the chunk boundary.
    """
    data = np.empty_like(a.data)
    data[0] = first_row
    data[1:] = a.data[:-1]
    out = Tensor(data, _needs_grad(a), (a,), "shift_rows")
    if out.requires_grad:
        def bwd(g):
            ga = np.zeros_like(a.data)
            ga[:-1] = g[1:]
            a._accumulate(ga)
        out._backward = bwd
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[:, start:stop], _needs_grad(a), (a,), "slice_cols")
    if out.requires_grad:
        def bwd(g):
            ga = np.zeros_like(a.data)
            ga[:, start:stop] = g
            a._accumulate(ga)
        out._backward = bwd
    return out


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean next-token negative log-likelihood (natural log) over all rows."""
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.ndim != 1 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs targets {targets.shape}")
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(targets.shape[0])
    out = Tensor(np.asarray(-logp[rows, targets].mean()), _needs_grad(logits),
                 (logits,), "cross_entropy")
    if out.requires_grad:
        def bwd(g):
            p = np.exp(logp)
            p[rows, targets] -= 1.0
            logits._accumulate(p * (g / targets.shape[0]))
        out._backward = bwd
    return out
