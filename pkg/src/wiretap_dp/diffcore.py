"""Small reverse-mode automatic differentiation over float64 numpy arrays.

Every value in a graph is a :class:`Node`. Leaves are either parameters
(``requires_grad=True``) or constants. Operations build new nodes eagerly,
caching their forward value, and :func:`backward` walks the graph once in
reverse topological order.

The op set is deliberately closed: affine, add, scale, mul, sigmoid, log,
power, row_sum, mean and squared difference. Everything the training code
needs is composed from these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


class ContractError(RuntimeError):
    """Raised when a call violates an API precondition."""


class Node:
    __slots__ = ("value", "parents", "grad_fns", "requires_grad", "op")

    def __init__(self, value, parents=(), grad_fns=(), requires_grad=False, op="leaf"):
        self.value = value
        self.parents = tuple(parents)
        self.grad_fns = tuple(grad_fns)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


def _as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


def _finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise FloatingPointError(f"non-finite value produced by {op}")
    return value


def param(x) -> Node:
    """Wrap ``x`` as a differentiable leaf. The array is shared, not copied."""
    arr = x if isinstance(x, np.ndarray) and x.dtype == np.float64 else _as_array(x)
    return Node(arr, requires_grad=True)


def const(x) -> Node:
    return Node(_as_array(x))


def _lift(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a: Node, b: Node, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# operations


def affine(x, W, b) -> Node:
    """y = x @ W.T + b for x of shape (n_in,) or (batch, n_in)."""
    x, W, b = _lift(x), _lift(W), _lift(b)
    if W.value.ndim != 2 or b.value.ndim != 1:
        raise DimensionError(f"affine: W must be 2-D and b 1-D, got {W.shape} and {b.shape}")
    n_out, n_in = W.shape
    if x.value.ndim not in (1, 2) or x.shape[-1] != n_in or b.shape[0] != n_out:
        raise DimensionError(
            f"affine: x {x.shape}, W {W.shape}, b {b.shape} do not conform"
        )
    xv, Wv = x.value, W.value
    out = xv @ Wv.T + b.value

    def gx(g):
        return g @ Wv

    def gW(g):
        return np.outer(g, xv) if xv.ndim == 1 else g.T @ xv

    def gb(g):
        return g if g.ndim == 1 else g.sum(axis=0)

    return Node(_finite(out, "affine"), (x, W, b), (gx, gW, gb), op="affine")


def add(a, b) -> Node:
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.shape, b.shape
    out = a.value + b.value
    return Node(
        _finite(out, "add"),
        (a, b),
        (lambda g: _unbroadcast(g, sa), lambda g: _unbroadcast(g, sb)),
        op="add",
    )


def scale(x, alpha) -> Node:
    """Multiply by a constant scalar or constant broadcastable array."""
    x = _lift(x)
    alpha = np.asarray(alpha, dtype=np.float64)
    try:
        out = x.value * alpha
    except ValueError:
        raise DimensionError(f"scale: {x.shape} and {alpha.shape} do not broadcast") from None
    sx = x.shape
    return Node(_finite(out, "scale"), (x,), (lambda g: _unbroadcast(g * alpha, sx),), op="scale")


def mul(a, b) -> Node:
    """Element-wise product of two nodes with broadcasting."""
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "mul")
    av, bv = a.value, b.value
    sa, sb = a.shape, b.shape
    return Node(
        _finite(av * bv, "mul"),
        (a, b),
        (lambda g: _unbroadcast(g * bv, sa), lambda g: _unbroadcast(g * av, sb)),
        op="mul",
    )


def sigmoid(x, clamp: float = 0.0) -> Node:
    """Logistic function, optionally clamped into [clamp, 1 - clamp].

    Clamped entries receive zero gradient.
    """
    x = _lift(x)
    xv = x.value
    s = np.empty_like(xv)
    pos = xv >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-xv[pos]))
    e = np.exp(xv[~pos])
    s[~pos] = e / (1.0 + e)
    deriv = s * (1.0 - s)
    if clamp > 0.0:
        clipped = np.clip(s, clamp, 1.0 - clamp)
        deriv = np.where(clipped != s, 0.0, deriv)
        s = clipped
    return Node(_finite(s, "sigmoid"), (x,), (lambda g: g * deriv,), op="sigmoid")


def log(x) -> Node:
    x = _lift(x)
    xv = x.value
    if np.any(xv <= 0):
        raise FloatingPointError("log of non-positive value")
    return Node(np.log(xv), (x,), (lambda g: g / xv,), op="log")


def power(x, p: float) -> Node:
    """Element-wise x**p for positive x."""
    x = _lift(x)
    xv = x.value
    if np.any(xv <= 0):
        raise FloatingPointError("power of non-positive value")
    out = xv**p
    return Node(_finite(out, "power"), (x,), (lambda g: g * p * out / xv,), op="power")


def row_sum(x) -> Node:
    """Sum over the last axis, keeping it as length one."""
    x = _lift(x)
    sx = x.shape
    out = x.value.sum(axis=-1, keepdims=True)
    return Node(_finite(out, "row_sum"), (x,), (lambda g: np.broadcast_to(g, sx).copy(),), op="row_sum")


def mean(x) -> Node:
    """Arithmetic mean over all elements; returns a scalar node."""
    x = _lift(x)
    sx = x.shape
    n = x.value.size
    if n == 0:
        raise DimensionError("mean of empty tensor")
    out = np.asarray(x.value.mean())
    return Node(_finite(out, "mean"), (x,), (lambda g: np.full(sx, g / n),), op="mean")


def sqdiff(a, b) -> Node:
    """Element-wise (a - b)**2."""
    a, b = _lift(a), _lift(b)
    if a.shape != b.shape:
        raise DimensionError(f"sqdiff: shapes {a.shape} and {b.shape} differ")
    d = a.value - b.value
    return Node(_finite(d * d, "sqdiff"), (a, b), (lambda g: 2.0 * g * d, lambda g: -2.0 * g * d), op="sqdiff")


def sub(a, b) -> Node:
    return add(a, scale(b, -1.0))


def one_minus(x) -> Node:
    return add(scale(x, -1.0), const(1.0))


# --------------------------------------------------------------------------
# backward


def _topological(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node, params: Sequence[Node] | None = None) -> dict[Node, np.ndarray]:
    """Gradients of the scalar ``root`` with respect to every parameter leaf.

    Returns a mapping from leaf node to gradient array. When ``params`` is
    given, those leaves always appear in the result (zeros if unreachable).
    """
    if root.value.size != 1 or root.value.ndim > 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    adj: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    grads: dict[Node, np.ndarray] = {}
    for node in reversed(_topological(root)):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            if node.requires_grad:
                grads[node] = g
            continue
        for parent, fn in zip(node.parents, node.grad_fns):
            if not parent.requires_grad:
                continue
            contrib = fn(g)
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + contrib
            else:
                adj[key] = contrib
    if params is not None:
        for p in params:
            if p not in grads:
                grads[p] = np.zeros_like(p.value)
    for g in grads.values():
        _finite(g, "backward")
    return grads


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """Cosine annealing with warm restarts over plain or adaptive descent.

    ``t_cur`` is measured in schedule units; callers advancing once per
    batch pass ``increment = 1 / batches_per_epoch`` so that ``T_0`` counts
    epochs.
    """

    lr0: float
    T_0: int = 10
    T_mult: int = 2
    lr_min: float = 0.0
    method: str = "sgd"
    momentum: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    t_cur: float = 0.0
    T_cur: float = field(default=None)  # type: ignore[assignment]
    n_steps: int = 0
    buffers: list = field(default_factory=list)

    def __post_init__(self):
        if self.lr0 <= 0 or self.T_0 < 1 or self.T_mult < 1 or self.lr_min < 0:
            raise ContractError("invalid optimizer schedule")
        if self.method not in ("sgd", "adam"):
            raise ContractError(f"unknown optimizer method {self.method!r}")
        if self.T_cur is None:
            self.T_cur = float(self.T_0)

    @property
    def lr(self) -> float:
        return self.lr_min + 0.5 * (self.lr0 - self.lr_min) * (
            1.0 + math.cos(math.pi * self.t_cur / self.T_cur)
        )

    def advance(self, increment: float = 1.0) -> None:
        self.t_cur += increment
        # tolerate accumulated rounding from fractional increments
        if self.t_cur >= self.T_cur - 1e-9:
            self.t_cur = max(self.t_cur - self.T_cur, 0.0)
            if self.t_cur < 1e-9:
                self.t_cur = 0.0
            self.T_cur *= self.T_mult

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray], increment: float = 1.0) -> None:
        """Update ``params`` in place and advance the schedule."""
        if len(params) != len(grads):
            raise DimensionError("params and grads are not aligned")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise DimensionError(f"param {p.shape} vs grad {g.shape}")
        if not self.buffers:
            if self.method == "adam":
                self.buffers = [(np.zeros_like(p), np.zeros_like(p)) for p in params]
            else:
                self.buffers = [np.zeros_like(p) for p in params]
        lr = self.lr
        self.n_steps += 1
        if self.method == "sgd":
            for p, g, v in zip(params, grads, self.buffers):
                if self.momentum:
                    v *= self.momentum
                    v += g
                    p -= lr * v
                else:
                    p -= lr * g
        else:
            b1, b2 = self.betas
            c1 = 1.0 - b1**self.n_steps
            c2 = 1.0 - b2**self.n_steps
            for p, g, (m, v) in zip(params, grads, self.buffers):
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        self.advance(increment)


def uniform_init(rng: np.random.Generator, n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray]:
    """Fan-in scaled uniform weights on [-1/sqrt(n_in), 1/sqrt(n_in)]."""
    bound = 1.0 / math.sqrt(n_in)
    W = rng.uniform(-bound, bound, size=(n_out, n_in))
    b = rng.uniform(-bound, bound, size=n_out)
    return W, b


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of ``f`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g
