"""Minimal reverse-mode automatic differentiation over dense arrays.

Only the operations needed to push a Wasserstein loss back through a
stochastic network and a fixed-step integrator are supported: affine maps
(optionally with a per-sample weight matrix), the weight reparameterization
``a + sigma * eps``, elementwise activations, add, scale, square, sum and
concatenation. There is no general broadcasting.

Example::

    x = Value(np.array(3.0))
    y = square(x)
    backward(y)
    x.grad  # 6.0
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, EvaluationError

ACTIVATIONS = ("relu", "elu", "identity")

# Deferred per-sample outer products are flushed in chunks of this size.
_FLUSH_EVERY = 64


class Value:
    """A node in the computation graph: array data plus its gradient."""

    __slots__ = ("data", "_grad", "_parents", "_vjp", "op", "requires_grad", "_pending")

    def __init__(self, data, parents: Sequence["Value"] = (), op: str = "leaf",
                 vjp: Callable[[np.ndarray], None] | None = None,
                 requires_grad: bool = True):
        self.data = np.asarray(data, dtype=np.float64)
        self._grad = np.zeros_like(self.data)
        self._parents = tuple(parents)
        self._vjp = vjp
        self.op = op
        self.requires_grad = requires_grad
        self._pending: list[tuple[np.ndarray, np.ndarray]] = []

    @property
    def grad(self) -> np.ndarray:
        self._flush()
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        self._pending.clear()
        self._grad = np.asarray(value, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def zero_grad(self) -> None:
        self._pending.clear()
        self._grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        self._grad += g

    def _accumulate_outer(self, g: np.ndarray, x: np.ndarray) -> None:
        # grad[b] += outer(g[b], x[b]); batched into one matmul on flush
        self._pending.append((g, x))
        if len(self._pending) >= _FLUSH_EVERY:
            self._flush()

    def _flush(self) -> None:
        if not self._pending:
            return
        G = np.stack([g for g, _ in self._pending], axis=1)  # (B, T, O)
        X = np.stack([x for _, x in self._pending], axis=1)  # (B, T, I)
        self._pending.clear()
        self._grad += np.matmul(G.transpose(0, 2, 1), X)

    def __repr__(self) -> str:
        return f"Value(shape={self.data.shape}, op={self.op!r})"

    # operator sugar so integrators can be written once for arrays and Values
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_lift(other), -1.0))

    def __rsub__(self, other):
        return add(_lift(other), scale(self, -1.0))

    def __mul__(self, c):
        if isinstance(c, Value):
            raise TypeError("only scalar multiplication is supported")
        return scale(self, float(c))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)


def _lift(v) -> Value:
    return v if isinstance(v, Value) else constant(v)


def constant(data) -> Value:
    """A leaf that never receives gradient."""
    return Value(data, requires_grad=False)


def attach(data, parents: Sequence[Value], vjp: Callable[[np.ndarray], None],
           op: str = "custom") -> Value:
    """Create a node with a caller-supplied vector-Jacobian product.

    ``vjp`` receives the upstream gradient and must push contributions into
    the parents (via their ``_accumulate``).
    """
    req = any(p.requires_grad for p in parents)
    return Value(data, parents, op=op, vjp=vjp, requires_grad=req)


def _node(data, parents, op, vjp) -> Value:
    req = any(p.requires_grad for p in parents)
    return Value(data, parents, op=op, vjp=vjp if req else None, requires_grad=req)


def matvec_affine(weights: Value, x: Value, bias: Value) -> Value:
    """``weights @ x + bias``.

    Shapes: weights ``(O, I)`` or per-sample ``(B, O, I)``; x ``(I,)`` or
    ``(B, I)``; bias ``(O,)``. A per-sample weight needs a batched input.
    """
    W, xv, b = weights.data, x.data, bias.data
    if W.ndim not in (2, 3) or xv.ndim not in (1, 2) or b.ndim != 1:
        raise DimensionError(f"affine: unsupported ranks weights{W.shape} x{xv.shape} bias{b.shape}")
    O, I = W.shape[-2:]
    if xv.shape[-1] != I or b.shape[0] != O:
        raise DimensionError(f"affine: weights{W.shape} incompatible with x{xv.shape} / bias{b.shape}")
    if W.ndim == 3:
        if xv.ndim != 2 or xv.shape[0] != W.shape[0]:
            raise DimensionError(f"affine: per-sample weights{W.shape} need x of shape ({W.shape[0]}, {I}), got {xv.shape}")
        out = np.matmul(W, xv[:, :, None])[:, :, 0] + b
    else:
        out = xv @ W.T + b

    def vjp(g):
        if weights.requires_grad:
            if W.ndim == 3:
                weights._accumulate_outer(g, xv)
            elif xv.ndim == 2:
                weights._accumulate(g.T @ xv)
            else:
                weights._accumulate(np.outer(g, xv))
        if x.requires_grad:
            if W.ndim == 3:
                x._accumulate(np.matmul(g[:, None, :], W)[:, 0, :])
            else:
                x._accumulate(g @ W)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0) if g.ndim == 2 else g)

    return _node(out, (weights, x, bias), "affine", vjp)


def gaussian_weights(mean: Value, std: Value, eps: np.ndarray) -> Value:
    """Reparameterized weights ``mean + std * eps``.

    ``eps`` is a fixed standard-normal draw, either ``mean``-shaped or with
    one extra leading sample axis.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if mean.shape != std.shape or eps.shape[-mean.data.ndim:] != mean.shape:
        raise DimensionError(f"reparam: mean{mean.shape} std{std.shape} eps{eps.shape}")
    batched = eps.ndim == mean.data.ndim + 1
    out = mean.data + std.data * eps

    def vjp(g):
        if mean.requires_grad:
            mean._accumulate(g.sum(axis=0) if batched else g)
        if std.requires_grad:
            ge = g * eps
            std._accumulate(ge.sum(axis=0) if batched else ge)

    return _node(out, (mean, std), "reparam", vjp)


def activation(x: Value, kind: str) -> Value:
    """Elementwise ReLU, ELU (alpha = 1) or identity."""
    if kind == "identity":
        return x
    t = x.data
    if kind == "relu":
        slope = (t > 0).astype(np.float64)  # subgradient 0 at the kink
        out = t * slope
    elif kind == "elu":
        neg = np.exp(np.minimum(t, 0.0))
        out = np.where(t >= 0, t, neg - 1.0)
        slope = np.where(t >= 0, 1.0, neg)
    else:
        raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")

    def vjp(g):
        x._accumulate(g * slope)

    return _node(out, (x,), kind, vjp)


def add(x: Value, y: Value) -> Value:
    if x.shape != y.shape:
        raise DimensionError(f"add: shapes {x.shape} and {y.shape} differ")

    def vjp(g):
        if x.requires_grad:
            x._accumulate(g)
        if y.requires_grad:
            y._accumulate(g)

    return _node(x.data + y.data, (x, y), "add", vjp)


def scale(x: Value, c: float) -> Value:
    c = float(c)

    def vjp(g):
        x._accumulate(c * g)

    return _node(c * x.data, (x,), "scale", vjp)


def square(x: Value) -> Value:
    def vjp(g):
        x._accumulate(2.0 * x.data * g)

    return _node(x.data * x.data, (x,), "square", vjp)


def sum(x: Value) -> Value:  # noqa: A001 - mirrors numpy naming
    def vjp(g):
        x._accumulate(np.broadcast_to(g, x.shape))

    return _node(np.sum(x.data), (x,), "sum", vjp)


def concat(values: Sequence[Value], axis: int = -1) -> Value:
    values = list(values)
    out = np.concatenate([v.data for v in values], axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g):
        for v, piece in zip(values, np.split(g, sizes, axis=axis)):
            if v.requires_grad:
                v._accumulate(piece)

    return _node(out, values, "concat", vjp)


def _topological(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack: list[tuple[Value, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    Interior gradients are reset on each call, so calling twice without
    zeroing leaves doubles the leaf gradients.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topological(loss)
    for node in order:
        if not node.is_leaf:
            node.zero_grad()
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._vjp is not None:
            node._vjp(node.grad)


def zero_grad(values: Iterable[Value]) -> None:
    for v in values:
        v.zero_grad()


def grad_check(f: Callable[[Value], Value], theta, h: float = 1e-5) -> float:
    """Max relative gap between backprop and central differences.

    ``f`` maps a parameter-vector Value to a scalar Value. The gap per
    coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    theta = np.array(theta, dtype=np.float64)
    leaf = Value(theta.copy())
    out = f(leaf)
    if not np.all(np.isfinite(out.data)):
        raise EvaluationError("f(theta) is not finite")
    backward(out)
    analytic = leaf.grad.copy()

    def value_at(t):
        v = float(f(constant(t)).data)
        if not np.isfinite(v):
            raise EvaluationError("f is not finite near theta")
        return v

    numeric = np.empty_like(theta)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += h
        down[i] -= h
        numeric.reshape(-1)[i] = (value_at(up.reshape(theta.shape)) - value_at(down.reshape(theta.shape))) / (2 * h)
    gap = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))
    return float(gap.max()) if gap.size else 0.0
