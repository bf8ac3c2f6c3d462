"""Minimal reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps an ndarray and records the backward rule of the operation
that produced it.  Calling backward() on a scalar Tensor walks the tape in
reverse topological order and accumulates gradients into every reachable
leaf with requires_grad set.

The handful of nonlinear primitives the attention network needs (softmax,
GELU, row layer norm) are implemented both for Tensors and for raw
ndarrays through the dispatching module functions below, so the same
forward code serves inference, probes, and gradient computation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from . import matrix

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)
LAYER_NORM_EPS = 1e-5


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # Make ndarray <op> Tensor dispatch to the reflected Tensor methods
    # instead of numpy attempting elementwise coercion.
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @staticmethod
    def _lift(value) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    def __add__(self, other):
        other = Tensor._lift(other)

        def bwd(g, out):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return Tensor(self.data + other.data, parents=(self, other), backward=bwd)

    __radd__ = __add__

    def __neg__(self):
        return Tensor(-self.data, parents=(self,), backward=lambda g, out: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)

        def bwd(g, out):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return Tensor(self.data * other.data, parents=(self, other), backward=bwd)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("only division by a plain scalar is supported")
        return self * (1.0 / scalar)

    def __pow__(self, exponent):
        data = self.data ** exponent

        def bwd(g, out):
            return (g * exponent * self.data ** (exponent - 1),)

        return Tensor(data, parents=(self,), backward=bwd)

    def __matmul__(self, other):
        other = Tensor._lift(other)

        def bwd(g, out):
            ga = g @ np.swapaxes(other.data, -1, -2)
            gb = np.swapaxes(self.data, -1, -2) @ g
            return (_unbroadcast(ga, self.shape), _unbroadcast(gb, other.shape))

        return Tensor(self.data @ other.data, parents=(self, other), backward=bwd)

    def __rmatmul__(self, other):
        return Tensor._lift(other) @ self

    def sum(self):
        def bwd(g, out):
            return (np.broadcast_to(g, self.shape).copy(),)

        return Tensor(self.data.sum(), parents=(self,), backward=bwd)

    def backward(self):
        if self.data.shape != ():
            raise ValueError("backward() starts from a scalar")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            grads = node._backward(node.grad, node)
            for parent, g in zip(node._parents, grads):
                if parent.requires_grad:
                    parent.grad = parent.grad + g if parent.grad is not None else g


def transpose_last(x):
    """Swap the last two axes (batched-friendly transpose)."""
    if isinstance(x, Tensor):

        def bwd(g, out):
            return (np.swapaxes(g, -1, -2),)

        return Tensor(np.swapaxes(x.data, -1, -2), parents=(x,), backward=bwd)
    return np.swapaxes(x, -1, -2)


def softmax_rows(x):
    if isinstance(x, Tensor):
        y = matrix.softmax_rows(x.data)

        def bwd(g, out):
            inner = (g * y).sum(axis=-1, keepdims=True)
            return (y * (g - inner),)

        return Tensor(y, parents=(x,), backward=bwd)
    return matrix.softmax_rows(x)


def gelu(x):
    def forward(v):
        return 0.5 * v * (1.0 + erf(v * _INV_SQRT2))

    if isinstance(x, Tensor):
        y = forward(x.data)

        def bwd(g, out):
            v = x.data
            slope = 0.5 * (1.0 + erf(v * _INV_SQRT2)) + v * _INV_SQRT2PI * np.exp(-0.5 * v * v)
            return (g * slope,)

        return Tensor(y, parents=(x,), backward=bwd)
    return forward(x)


def layer_norm_rows(x, eps: float = LAYER_NORM_EPS):
    """Parameter-free normalization of each trailing-axis row."""

    def stats(v):
        mean = v.mean(axis=-1, keepdims=True)
        centered = v - mean
        scale = np.sqrt(centered.var(axis=-1, keepdims=True) + eps)
        return centered / scale, scale

    if isinstance(x, Tensor):
        normed, scale = stats(x.data)

        def bwd(g, out):
            g_mean = g.mean(axis=-1, keepdims=True)
            proj = (g * normed).mean(axis=-1, keepdims=True)
            return ((g - g_mean - normed * proj) / scale,)

        return Tensor(normed, parents=(x,), backward=bwd)
    normed, _ = stats(x)
    return normed


def concat_last(parts):
    """Concatenate along the last axis; mixed Tensor/ndarray inputs allowed."""
    if any(isinstance(p, Tensor) for p in parts):
        parts = [Tensor._lift(p) for p in parts]
        widths = [p.shape[-1] for p in parts]

        def bwd(g, out):
            grads = []
            offset = 0
            for w in widths:
                grads.append(g[..., offset:offset + w])
                offset += w
            return tuple(grads)

        return Tensor(
            np.concatenate([p.data for p in parts], axis=-1),
            parents=tuple(parts),
            backward=bwd,
        )
    return np.concatenate(parts, axis=-1)


def mse(pred, target):
    """Mean squared error; target is always treated as a constant."""
    target = target.data if isinstance(target, Tensor) else target
    diff = pred - target
    total = (diff * diff).sum()
    return total / float(np.asarray(target).size)
