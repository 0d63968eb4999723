"""Minimal reverse-mode automatic differentiation over numpy arrays.

A ``Tensor`` wraps a float64 ndarray and records enough of the computation
graph to backpropagate a scalar loss. Constant subexpressions are pruned at
construction, so wrapping inputs that do not require gradients costs nothing.

The module-level helpers (``tanh``, ``exp``, ``take_rows``, ...) dispatch on
type, so forward code written with them runs identically on raw ndarrays
(fast inference path) and on Tensors (training path).
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")
    __array_ufunc__ = None  # force numpy to defer to our reflected operators

    def __init__(self, data, requires_grad: bool = False, parents=(), bwd=None):
        self.data = np.asarray(data, dtype=float)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @staticmethod
    def _node(data, parents, bwd) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(data, requires_grad=True, parents=tuple(parents), bwd=bwd)
        return Tensor(data)

    @staticmethod
    def _acc(p: "Tensor", g: np.ndarray) -> None:
        if p.requires_grad:
            p.grad = g if p.grad is None else p.grad + g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data

        def bwd(g):
            Tensor._acc(self, _unbroadcast(g, self.data.shape))
            Tensor._acc(other, _unbroadcast(g, other.data.shape))

        return Tensor._node(out_data, (self, other), bwd)

    __radd__ = __add__

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data

        def bwd(g):
            Tensor._acc(self, _unbroadcast(g * other.data, self.data.shape))
            Tensor._acc(other, _unbroadcast(g * self.data, other.data.shape))

        return Tensor._node(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self):
        def bwd(g):
            Tensor._acc(self, -g)

        return Tensor._node(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return Tensor._lift(other) * self ** -1

    def __pow__(self, n):
        if not isinstance(n, (int, float)):
            raise TypeError("only scalar exponents are supported")
        out_data = self.data ** n

        def bwd(g):
            Tensor._acc(self, g * n * self.data ** (n - 1))

        return Tensor._node(out_data, (self,), bwd)

    def __matmul__(self, other):
        other = Tensor._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        out_data = self.data @ other.data

        def bwd(g):
            Tensor._acc(self, g @ other.data.T)
            Tensor._acc(other, self.data.T @ g)

        return Tensor._node(out_data, (self, other), bwd)

    def __rmatmul__(self, other):
        return Tensor._lift(other) @ self

    # -- nonlinearities and reductions ----------------------------------------

    def tanh(self):
        y = np.tanh(self.data)

        def bwd(g):
            Tensor._acc(self, g * (1.0 - y * y))

        return Tensor._node(y, (self,), bwd)

    def sigmoid(self):
        y = _sigmoid_np(self.data)

        def bwd(g):
            Tensor._acc(self, g * y * (1.0 - y))

        return Tensor._node(y, (self,), bwd)

    def exp(self):
        y = np.exp(self.data)

        def bwd(g):
            Tensor._acc(self, g * y)

        return Tensor._node(y, (self,), bwd)

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def bwd(g):
            if axis is None:
                Tensor._acc(self, np.broadcast_to(g, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                Tensor._acc(self, np.broadcast_to(gg, shape).copy())

        return Tensor._node(out_data, (self,), bwd)

    def reshape(self, *shape):
        shape = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        old = self.data.shape
        out_data = self.data.reshape(shape)

        def bwd(g):
            Tensor._acc(self, g.reshape(old))

        return Tensor._node(out_data, (self,), bwd)

    def clip(self, lo: float, hi: float):
        inside = (self.data >= lo) & (self.data <= hi)
        out_data = np.clip(self.data, lo, hi)

        def bwd(g):
            Tensor._acc(self, g * inside)

        return Tensor._node(out_data, (self,), bwd)

    # -- backprop -------------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() needs a scalar output")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def minimum(a, b):
    """Elementwise min; subgradient to the smaller branch (ties go left)."""
    if not isinstance(a, Tensor) and not isinstance(b, Tensor):
        return np.minimum(a, b)
    a = Tensor._lift(a)
    b = Tensor._lift(b)
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        Tensor._acc(a, _unbroadcast(g * take_a, a.data.shape))
        Tensor._acc(b, _unbroadcast(g * ~take_a, b.data.shape))

    return Tensor._node(out_data, (a, b), bwd)


def take_rows(x, idx: np.ndarray):
    """Row gather. ``idx`` must not repeat an index (backward uses +=)."""
    if not isinstance(x, Tensor):
        return x[idx]
    out_data = x.data[idx]

    def bwd(g):
        if x.requires_grad:
            if x.grad is None:
                x.grad = np.zeros_like(x.data)
            x.grad[idx] += g

    return Tensor._node(out_data, (x,), bwd)


def concat_rows(parts):
    """Concatenate along axis 0."""
    if not any(isinstance(p, Tensor) for p in parts):
        return np.concatenate(parts, axis=0)
    parts = [Tensor._lift(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def bwd(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            Tensor._acc(p, g[lo:hi])

    return Tensor._node(out_data, tuple(parts), bwd)


# -- type-dispatched helpers so forward code runs on Tensors or ndarrays ----

def tanh(x):
    return x.tanh() if isinstance(x, Tensor) else np.tanh(x)


def sigmoid(x):
    return x.sigmoid() if isinstance(x, Tensor) else _sigmoid_np(x)


def exp(x):
    return x.exp() if isinstance(x, Tensor) else np.exp(x)


def clip(x, lo, hi):
    return x.clip(lo, hi) if isinstance(x, Tensor) else np.clip(x, lo, hi)


def sum_all(x):
    return x.sum() if isinstance(x, Tensor) else np.sum(x)


def reshape(x, shape):
    return x.reshape(shape) if isinstance(x, Tensor) else np.reshape(x, shape)


def value_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)
