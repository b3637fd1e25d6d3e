"""A small tape-based reverse-mode autodiff over numpy arrays.

Only the operations needed by the point network and the losses are provided.
Each op returns a new :class:`Tensor` holding a closure that pushes the
upstream gradient to its parents.
"""

from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, parents=(), backward=None, requires_grad=False, name=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, name={self.name})"

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        if not np.isfinite(self.data).all():
            raise FloatingPointError("cannot differentiate a non-finite loss")
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            stack.extend((p, False) for p in node.parents)
        self._accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                node.grad = None  # intermediates only; leaves have no _backward

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other, self.data.dtype)

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other, self.data.dtype))

    def __rsub__(self, other):
        return as_tensor(other, self.data.dtype) + (-self)

    def __mul__(self, other):
        other = as_tensor(other, self.data.dtype)

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other, self.data.dtype)
        return self * other.reciprocal()

    def reciprocal(self):
        out = 1.0 / self.data

        def bw(g):
            self._accumulate(-g * out * out)

        return Tensor(out, (self,), bw)

    def __matmul__(self, other):
        other = as_tensor(other, self.data.dtype)

        def bw(g):
            # promote 1-d operands to matrices, as np.matmul does
            a = self.data[None, :] if self.ndim == 1 else self.data
            b = other.data[:, None] if other.ndim == 1 else other.data
            g2 = g
            if self.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if other.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            if self.requires_grad:
                gs = g2 @ np.swapaxes(b, -1, -2)
                if self.ndim == 1:
                    gs = gs[..., 0, :]
                self._accumulate(_unbroadcast(gs, self.shape))
            if other.requires_grad:
                go = np.swapaxes(a, -1, -2) @ g2
                if other.ndim == 1:
                    go = go[..., 0]
                other._accumulate(_unbroadcast(go, other.shape))

        return Tensor(self.data @ other.data, (self, other), bw)

    def __getitem__(self, index):
        def bw(g):
            full = np.zeros_like(self.data)
            np.add.at(full, index, g)
            self._accumulate(full)

        return Tensor(self.data[index], (self,), bw)

    # reductions --------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def max(self, axis: int):
        """Max over one axis; the gradient goes to the first maximiser."""
        arg = np.argmax(self.data, axis=axis)
        out = np.take_along_axis(self.data, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

        def bw(g):
            full = np.zeros_like(self.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
            self._accumulate(full)

        return Tensor(out, (self,), bw)

    def logsumexp(self, axis: int, keepdims=False):
        m = self.data.max(axis=axis, keepdims=True)
        e = np.exp(self.data - m)
        s = e.sum(axis=axis, keepdims=True)
        out = np.log(s) + m
        soft = e / s

        def bw(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(g * soft)

        return Tensor(out if keepdims else out.squeeze(axis), (self,), bw)

    # elementwise -----------------------------------------------------------
    def relu(self):
        mask = self.data > 0

        def bw(g):
            self._accumulate(g * mask)

        return Tensor(self.data * mask, (self,), bw)

    def exp(self):
        out = np.exp(self.data)

        def bw(g):
            self._accumulate(g * out)

        return Tensor(out, (self,), bw)

    def log(self):
        def bw(g):
            self._accumulate(g / self.data)

        return Tensor(np.log(self.data), (self,), bw)

    # shape -------------------------------------------------------------------
    def reshape(self, *shape):
        def bw(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor(self.data.reshape(*shape), (self,), bw)

    @property
    def T(self):
        def bw(g):
            self._accumulate(np.swapaxes(g, -1, -2))

        return Tensor(np.swapaxes(self.data, -1, -2), (self,), bw)

    def expand(self, axis: int, size: int):
        """Insert ``axis`` and repeat the tensor ``size`` times along it."""
        data = np.expand_dims(self.data, axis)
        shape = list(data.shape)
        shape[axis] = size

        def bw(g):
            self._accumulate(g.sum(axis=axis))

        return Tensor(np.broadcast_to(data, shape), (self,), bw)

    def normalize(self, eps: float = 1e-12):
        """L2-normalise along the last axis; rows with norm < eps become e_1 with zero gradient."""
        norm = np.sqrt((self.data * self.data).sum(axis=-1, keepdims=True))
        small = norm < eps
        safe = np.where(small, 1.0, norm)
        out = self.data / safe
        if small.any():
            basis = np.zeros(self.shape[-1], dtype=self.data.dtype)
            basis[0] = 1.0
            out = np.where(small, basis, out)

        def bw(g):
            dot = (g * out).sum(axis=-1, keepdims=True)
            self._accumulate(np.where(small, 0.0, (g - out * dot) / safe))

        return Tensor(out, (self,), bw)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def concat(tensors, axis: int) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, a, b in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                t._accumulate(np.take(g, np.arange(a, b), axis=axis))

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def bw(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def segment_mean(x: Tensor, segments: np.ndarray, count: int) -> Tensor:
    """Mean of the rows of ``x`` per segment id in ``[0, count)``; every segment must be non-empty."""
    segments = np.asarray(segments, dtype=np.int64)
    sizes = np.bincount(segments, minlength=count).astype(x.data.dtype)
    if (sizes == 0).any():
        raise ValueError("segment_mean got an empty segment")
    out = np.zeros((count,) + x.shape[1:], dtype=x.data.dtype)
    np.add.at(out, segments, x.data)
    out /= sizes.reshape((-1,) + (1,) * (x.ndim - 1))

    def bw(g):
        x._accumulate(g[segments] / sizes[segments].reshape((-1,) + (1,) * (x.ndim - 1)))

    return Tensor(out, (x,), bw)
