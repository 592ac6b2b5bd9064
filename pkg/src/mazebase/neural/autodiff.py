"""A small reverse-mode differentiation core over numpy arrays.

Only the operations the three policy models need are provided. Every op
returns a new :class:`Tensor` holding its parents and a closure that maps the
output gradient to parent gradients; :meth:`Tensor.backward` walks the graph
in reverse topological order.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn: Optional[Callable] = None,
                 requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.value.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.value)
        order = _topo(self)
        self.grad = np.asarray(grad, dtype=np.float64)
        for node in reversed(order):
            if node.backward_fn is None or node.grad is None:
                continue
            pgrads = node.backward_fn(node.grad)
            for p, g in zip(node.parents, pgrads):
                if g is None or not p.requires_grad:
                    continue
                p.grad = g if p.grad is None else p.grad + g
            if node.parents:
                node.grad = None  # free interior gradients

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)


def param(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _topo(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
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


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# --------------------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    return Tensor(a.value + b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    return Tensor(a.value - b.value, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = const(a), const(b)
    return Tensor(a.value * b.value, (a, b),
                  lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def div(a, b) -> Tensor:
    a, b = const(a), const(b)
    return Tensor(a.value / b.value, (a, b),
                  lambda g: (_unbroadcast(g / b.value, a.shape),
                             _unbroadcast(-g * a.value / b.value ** 2, b.shape)))


def neg(a) -> Tensor:
    a = const(a)
    return Tensor(-a.value, (a,), lambda g: (-g,))


def tanh(a) -> Tensor:
    a = const(a)
    y = np.tanh(a.value)
    return Tensor(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = const(a)
    y = np.exp(a.value)
    return Tensor(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = const(a)
    return Tensor(np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a) -> Tensor:
    a = const(a)
    return Tensor(a.value ** 2, (a,), lambda g: (2.0 * g * a.value,))


def stop_gradient(a) -> Tensor:
    return Tensor(const(a).value.copy())


# --------------------------------------------------------------------------- reductions and indexing

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = const(a)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a) -> Tensor:
    a = const(a)
    return mul(sum(a), 1.0 / a.value.size)


def gather_rows(a, idx) -> Tensor:
    """``a[idx]`` along the first axis (repeats allowed)."""
    a = const(a)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.value[idx], (a,), back)


def segment_sum(a, seg, n_segments: int) -> Tensor:
    """Sum rows of ``a`` that share a segment id; the inverse of :func:`gather_rows`."""
    a = const(a)
    seg = np.asarray(seg, dtype=np.intp)
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, seg, a.value)
    return Tensor(out, (a,), lambda g: (g[seg],))


def segment_max(values: np.ndarray, seg: np.ndarray, n_segments: int) -> np.ndarray:
    out = np.full(n_segments, -np.inf)
    np.maximum.at(out, seg, values)
    return out


def pick(a, idx) -> Tensor:
    """Row-wise selection ``a[i, idx[i]]`` of a 2-d tensor."""
    a = const(a)
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def back(g):
        out = np.zeros_like(a.value)
        out[rows, idx] = g
        return (out,)

    return Tensor(a.value[rows, idx], (a,), back)


def reshape(a, shape) -> Tensor:
    a = const(a)
    return Tensor(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


# --------------------------------------------------------------------------- products

def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)

    def back(g):
        ga = g @ b.value.T if a.requires_grad else None
        gb = a.value.T @ g if b.requires_grad else None
        return ga, gb

    return Tensor(a.value @ b.value, (a, b), back)


def spmatmul(s: sp.csr_matrix, b) -> Tensor:
    """Constant sparse matrix times a dense tensor."""
    b = const(b)
    st = s.T.tocsr()
    return Tensor(np.asarray(s @ b.value), (b,), lambda g: (np.asarray(st @ g),))


def rowdot(a, b) -> Tensor:
    """Row-wise inner products of two equally shaped 2-d tensors."""
    return sum(mul(a, b), axis=1)


# --------------------------------------------------------------------------- softmax family

def log_softmax(a) -> Tensor:
    """Row-wise log-softmax of a 2-d tensor."""
    a = const(a)
    shifted = sub(a, a.value.max(axis=1, keepdims=True))
    return sub(shifted, log(sum(exp(shifted), axis=1, keepdims=True)))


def segment_softmax(scores, seg, n_segments: int) -> Tensor:
    """Softmax over each group of a 1-d score vector, groups given by ``seg``."""
    scores = const(scores)
    seg = np.asarray(seg, dtype=np.intp)
    m = segment_max(scores.value, seg, n_segments)
    e = exp(sub(scores, m[seg]))
    z = segment_sum(e, seg, n_segments)
    return div(e, gather_rows(z, seg))
