"""Minimal reverse-mode differentiation over float64 ndarrays.

A :class:`Tape` records primitive operations in creation order (which is a
topological order), so the backward pass is a single reversed sweep that
accumulates each node's gradient exactly once. Operands that are plain
ndarrays are treated as constants; only values wrapped by
:meth:`Tape.variable` (or produced by recorded ops) receive gradients.

Every op broadcasts the way numpy does, including a leading batch axis on
matmul/spmm, so a whole batch of graph signals flows through one recorded
graph.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graphs import StructureMatrix
from .numcore import relu as _relu, row_softmax as _row_softmax, sigmoid as _sigmoid

__all__ = ["Node", "Tape", "backward"]


class Node:
    """A recorded value: ndarray payload plus the closures that push gradient
    back to its parents."""

    __slots__ = ("value", "grad", "parents", "vjps", "tape")

    def __init__(self, value, parents, vjps, tape):
        self.value = value
        self.grad = None
        self.parents = parents
        self.vjps = vjps
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to the shape of the operand it belongs to."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, (have, want) in enumerate(zip(g.shape, shape)):
        if want == 1 and have != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _value(x):
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=float)


class Tape:
    def __init__(self):
        self._nodes: list[Node] = []

    def _record(self, value, parents, vjps) -> Node:
        node = Node(np.asarray(value, dtype=float), parents, vjps, self)
        self._nodes.append(node)
        return node

    def variable(self, value) -> Node:
        """Wrap an array as a leaf that will receive a gradient."""
        return self._record(np.array(value, dtype=float, copy=True), (), ())

    # -- primitives --------------------------------------------------------

    def matmul(self, a, b) -> Node:
        av, bv = _value(a), _value(b)
        out = av @ bv

        def vjp_a(g):
            return _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)

        def vjp_b(g):
            return _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)

        return self._record(out, (a, b), (vjp_a, vjp_b))

    def spmm(self, z, x) -> Node:
        """Sparse constant (StructureMatrix or scipy sparse) times a recorded
        dense operand; supports a leading batch axis on x."""
        m = z.mat if isinstance(z, StructureMatrix) else z
        if not sp.issparse(m):
            raise TypeError("spmm expects a sparse left operand")
        xv = _value(x)

        def apply(mat, arr):
            if arr.ndim == 2:
                return mat @ arr
            b, n, f = arr.shape
            flat = np.moveaxis(arr, 1, 0).reshape(n, b * f)
            out = mat @ flat
            return np.moveaxis(out.reshape(mat.shape[0], b, f), 0, 1)

        mt = m.T.tocsr()
        return self._record(apply(m, xv), (x,), (lambda g: apply(mt, g),))

    def add(self, a, b) -> Node:
        av, bv = _value(a), _value(b)
        out = av + bv
        return self._record(
            out,
            (a, b),
            (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(g, bv.shape)),
        )

    def sub(self, a, b) -> Node:
        av, bv = _value(a), _value(b)
        return self._record(
            av - bv,
            (a, b),
            (lambda g: _unbroadcast(g, av.shape), lambda g: _unbroadcast(-g, bv.shape)),
        )

    def scale(self, a, s: float) -> Node:
        av = _value(a)
        return self._record(av * s, (a,), (lambda g: g * s,))

    def square(self, a) -> Node:
        av = _value(a)
        return self._record(av * av, (a,), (lambda g: 2.0 * av * g,))

    def relu(self, a) -> Node:
        av = _value(a)
        out = _relu(av)
        return self._record(out, (a,), (lambda g: g * (av > 0.0),))

    def sigmoid(self, a) -> Node:
        out = _sigmoid(_value(a))
        return self._record(out, (a,), (lambda g: g * out * (1.0 - out),))

    def row_softmax(self, a) -> Node:
        out = _row_softmax(_value(a))

        def vjp(g):
            return out * (g - np.sum(g * out, axis=-1, keepdims=True))

        return self._record(out, (a,), (vjp,))

    def transpose(self, a) -> Node:
        av = _value(a)
        return self._record(
            np.swapaxes(av, -1, -2), (a,), (lambda g: np.swapaxes(g, -1, -2),)
        )

    def concat(self, parts, axis: int = -1) -> Node:
        values = [_value(p) for p in parts]
        out = np.concatenate(values, axis=axis)
        sizes = [v.shape[axis] for v in values]
        splits = np.cumsum(sizes)[:-1]

        def make_vjp(i):
            return lambda g: np.split(g, splits, axis=axis)[i]

        return self._record(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))

    def sum(self, a) -> Node:
        av = _value(a)
        return self._record(av.sum(), (a,), (lambda g: g * np.ones_like(av),))

    def mse(self, pred, target) -> Node:
        pv, tv = _value(pred), _value(target)
        if pv.shape != tv.shape:
            raise ValueError(f"mse shape mismatch: {pv.shape} vs {tv.shape}")
        diff = pv - tv
        out = np.mean(diff * diff)
        scale = 2.0 / diff.size

        def vjp_p(g):
            return g * scale * diff

        def vjp_t(g):
            return -g * scale * diff

        return self._record(out, (pred, target), (vjp_p, vjp_t))

    # -- reverse sweep -----------------------------------------------------

    def backward(self, loss: Node) -> None:
        """Accumulate gradients of a scalar loss into every recorded node."""
        if not isinstance(loss, Node) or loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if np.asarray(loss.value).size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.value.shape}")
        for node in self._nodes:
            node.grad = None
        loss.grad = np.ones_like(np.asarray(loss.value, dtype=float))
        for node in reversed(self._nodes):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in zip(node.parents, node.vjps):
                if not isinstance(parent, Node):
                    continue
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = contrib.copy() if contrib is g else contrib
                else:
                    parent.grad = parent.grad + contrib


def backward(tape: Tape, loss: Node) -> None:
    """Function-style alias for :meth:`Tape.backward`."""
    tape.backward(loss)
