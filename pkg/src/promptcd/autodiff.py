"""Minimal reverse-mode autodiff over numpy float64 arrays.

Covers exactly the operations the diagnosis models need (affine maps,
sigmoid, gathers, concatenation, reductions). Every gradient is verified
against central finite differences in the test suite; summation order is
fixed, so repeated runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, StateError

BCE_EPS = 1e-7


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A numpy array plus the backward closure that built it."""

    __slots__ = ("data", "grad", "requires_grad", "tag", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, tag=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.tag = tag
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        label = f" tag={self.tag!r}" if self.tag else ""
        return f"Tensor(shape={self.data.shape}{label})"

    # -- graph construction --------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        live = tuple(p for p in parents if p.requires_grad or p._parents)
        if live:
            out._parents = live
            out._backward = backward
            out.requires_grad = True
        return out

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Backpropagate from this scalar into every reachable leaf."""
        if self.data.size != 1:
            raise StateError("backward requires a scalar loss")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        out_data = self.data + other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._make(out_data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self._accumulate(-g)

        return Tensor._make(-self.data, (self,), backward)

    def __sub__(self, other):
        other = as_tensor(other)
        out_data = self.data - other.data

        def backward(g):
            self._accumulate(_unbroadcast(g, self.data.shape))
            other._accumulate(_unbroadcast(-g, other.data.shape))

        return Tensor._make(out_data, (self, other), backward)

    def __rsub__(self, other):
        return as_tensor(other).__sub__(self)

    def __mul__(self, other):
        other = as_tensor(other)
        out_data = self.data * other.data

        def backward(g):
            self._accumulate(_unbroadcast(g * other.data, self.data.shape))
            other._accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(out_data, (self, other), backward)

    __rmul__ = __mul__

    def matmul(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ShapeError("matmul expects 2-D operands")
        if self.data.shape[1] != other.data.shape[0]:
            raise ShapeError(
                f"matmul mismatch {self.data.shape} @ {other.data.shape}"
            )
        out_data = self.data @ other.data

        def backward(g):
            self._accumulate(g @ other.data.T)
            other._accumulate(self.data.T @ g)

        return Tensor._make(out_data, (self, other), backward)

    __matmul__ = matmul

    def transpose(self):
        if self.data.ndim != 2:
            raise ShapeError("transpose expects a 2-D tensor")

        def backward(g):
            self._accumulate(g.T)

        return Tensor._make(self.data.T, (self,), backward)

    # -- shape ops -----------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.data.shape

        def backward(g):
            self._accumulate(g.reshape(old))

        return Tensor._make(self.data.reshape(shape), (self,), backward)

    # -- elementwise nonlinearities -------------------------------------

    def sigmoid(self):
        x = self.data
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))

        return Tensor._make(out_data, (self,), backward)

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)

        return Tensor._make(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self._accumulate(g / self.data)

        return Tensor._make(np.log(self.data), (self,), backward)

    def clip(self, lo, hi):
        """Clamp values; gradient passes only through unclamped entries."""
        inside = (self.data > lo) & (self.data < hi)

        def backward(g):
            self._accumulate(g * inside)

        return Tensor._make(np.clip(self.data, lo, hi), (self,), backward)

    # -- reductions ------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)
        shape = self.data.shape

        def backward(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self._accumulate(np.broadcast_to(gg, shape).copy())

        return Tensor._make(out_data, (self,), backward)

    def mean(self):
        n = self.data.size

        def backward(g):
            self._accumulate(np.full(self.data.shape, float(g) / n))

        return Tensor._make(self.data.mean(), (self,), backward)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis):
    """Concatenate tensors along `axis`, splitting gradients back out."""
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return Tensor._make(out_data, tuple(tensors), backward)


def take_rows(table, idx):
    """Gather rows of a 2-D tensor; repeated indices accumulate gradients."""
    idx = np.asarray(idx, dtype=np.int64)
    if table.data.ndim != 2:
        raise ShapeError("take_rows expects a 2-D table")

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return Tensor._make(table.data[idx], (table,), backward)


def linear(x, weight, bias):
    """Affine map rows of x: x @ weight.T + bias, with weight (out, in)."""
    if x.data.shape[-1] != weight.data.shape[1]:
        raise ShapeError(
            f"linear expects input dim {weight.data.shape[1]}, got {x.data.shape[-1]}"
        )
    return x.matmul(weight.transpose()) + bias


def bce_loss(pred, label):
    """Mean binary cross-entropy with predictions clamped to [eps, 1-eps]."""
    pred = as_tensor(pred)
    y = np.asarray(label, dtype=np.float64).reshape(pred.data.shape)
    p = pred.clip(BCE_EPS, 1.0 - BCE_EPS)
    losses = -(y * p.log() + (1.0 - y) * (1.0 - p).log())
    return losses.mean()
