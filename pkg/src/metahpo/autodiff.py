"""Minimal reverse-mode automatic differentiation on numpy arrays.

Covers exactly the operations the dataset encoders and their training
objectives need: dense layers, pointwise nonlinearities, pooling means,
Euclidean distances, and the clamped-log bookkeeping of cross-entropy.
Every functional op also accepts plain ndarrays and then evaluates without
building a tape, so forward-only code shares the same implementation.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce `grad` back to `shape` by summing broadcast dimensions."""
    grad = np.asarray(grad, dtype=float)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tensor:
    """A node in the computation tape."""

    __slots__ = ("value", "parents", "backward_fn", "grad")

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=float)
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    # -- operator sugar (constants are wrapped on the fly) ------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _is_traced(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=float)


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def add(a, b):
    if not _is_traced(a, b):
        return value_of(a) + value_of(b)
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b):
    if not _is_traced(a, b):
        return value_of(a) - value_of(b)
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b):
    if not _is_traced(a, b):
        return value_of(a) * value_of(b)
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b):
    if not _is_traced(a, b):
        return value_of(a) @ value_of(b)
    a, b = _as_tensor(a), _as_tensor(b)
    return Tensor(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def relu(x):
    if not _is_traced(x):
        return np.maximum(value_of(x), 0.0)
    x = _as_tensor(x)
    return Tensor(np.maximum(x.value, 0.0), (x,), lambda g: (g * (x.value > 0.0),))


def tanh(x):
    if not _is_traced(x):
        return np.tanh(value_of(x))
    x = _as_tensor(x)
    t = np.tanh(x.value)
    return Tensor(t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x):
    v = value_of(x)
    s = np.empty_like(v, dtype=float)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    s[~pos] = ev / (1.0 + ev)
    if not _is_traced(x):
        return s
    x = _as_tensor(x)
    return Tensor(s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x):
    if not _is_traced(x):
        return np.exp(value_of(x))
    x = _as_tensor(x)
    e = np.exp(x.value)
    return Tensor(e, (x,), lambda g: (g * e,))


def log(x):
    if not _is_traced(x):
        return np.log(value_of(x))
    x = _as_tensor(x)
    return Tensor(np.log(x.value), (x,), lambda g: (g / x.value,))


def clip(x, lo: float, hi: float):
    """Clamp; gradient is zero wherever the bound is active."""
    if not _is_traced(x):
        return np.clip(value_of(x), lo, hi)
    x = _as_tensor(x)
    inside = (x.value > lo) & (x.value < hi)
    return Tensor(np.clip(x.value, lo, hi), (x,), lambda g: (g * inside,))


def reshape(x, shape):
    if not _is_traced(x):
        return value_of(x).reshape(shape)
    x = _as_tensor(x)
    return Tensor(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def mean(x, axis=None, keepdims=False):
    if not _is_traced(x):
        return value_of(x).mean(axis=axis, keepdims=keepdims)
    x = _as_tensor(x)
    out = x.value.mean(axis=axis, keepdims=keepdims)
    count = x.value.size if axis is None else x.value.shape[axis]

    def backward(g):
        g = np.asarray(g, dtype=float)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape) / count,)

    return Tensor(out, (x,), backward)


def total(x):
    """Sum of all entries."""
    if not _is_traced(x):
        return value_of(x).sum()
    x = _as_tensor(x)
    return Tensor(x.value.sum(), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def euclidean(a, b):
    """The distance ||a - b||_2 with a 0-subgradient at coincident points."""
    if not _is_traced(a, b):
        diff = value_of(a) - value_of(b)
        return float(np.sqrt((diff * diff).sum()))
    a, b = _as_tensor(a), _as_tensor(b)
    diff = a.value - b.value
    d = float(np.sqrt((diff * diff).sum()))

    def backward(g):
        if d < 1e-300:
            z = np.zeros_like(diff)
            return z, z.copy()
        gd = g * diff / d
        return gd, -gd

    return Tensor(d, (a, b), backward)


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable Tensor."""
    if loss.value.size != 1:
        raise ValueError("backward expects a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    for node in order:
        node.grad = np.zeros(node.shape)
    loss.grad = np.ones(loss.shape)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, pgrad in zip(node.parents, node.backward_fn(node.grad)):
            parent.grad = parent.grad + pgrad
