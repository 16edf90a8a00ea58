"""A small reverse-mode differentiation tape over numpy arrays.

Only the primitives needed by the mixture density network are provided.
Every primitive applied to at least one tracked :class:`Var` appends one node
to the owning :class:`GradientTape`; nodes are recorded in evaluation order,
which is a topological order, so the backward pass walks the node list once
in reverse.

Plain arrays (and ``Var`` objects created with ``tape=None``) are constants:
operations on constants only compute values and record nothing, which is how
the network is evaluated without gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from fullmdn import linalg
from fullmdn.errors import TapeError


class Var:
    __slots__ = ("value", "tape", "_id")

    def __init__(self, value, tape: "GradientTape | None" = None, _id: int = -1):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self._id = _id

    @property
    def tracked(self) -> bool:
        return self.tape is not None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        kind = "tracked" if self.tracked else "const"
        return f"Var({kind}, shape={self.shape})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


Backward = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class GradientTape:
    """Records primitive operations for a single backward pass."""

    def __init__(self):
        self._nodes: list[tuple[int, tuple[Var, ...], Backward]] = []
        self._count = 0
        self._consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def variable(self, value) -> Var:
        """A tracked leaf whose gradient can be requested."""
        if self._consumed:
            raise TapeError("tape has already been consumed by a backward pass")
        v = Var(value, self, self._count)
        self._count += 1
        return v

    def _record(self, value, parents: tuple[Var, ...], backward: Backward) -> Var:
        if self._consumed:
            raise TapeError("tape has already been consumed by a backward pass")
        out = Var(value, self, self._count)
        self._count += 1
        self._nodes.append((out._id, parents, backward))
        return out

    def gradient(self, output: Var, wrt: Sequence[Var], adjoint: float = 1.0) -> list[np.ndarray]:
        """Adjoints of ``output`` (seeded with ``adjoint``) with respect to ``wrt``.

        A tape supports exactly one backward pass; leaves ``output`` does not
        depend on get zero gradients.
        """
        if self._consumed:
            raise TapeError("tape has already been consumed by a backward pass")
        self._consumed = True
        grads: dict[int, np.ndarray] = {}
        if output.tape is self:
            grads[output._id] = np.full(output.shape, float(adjoint))
        for out_id, parents, backward in reversed(self._nodes):
            g = grads.pop(out_id, None)
            if g is None:
                continue
            for parent, pg in zip(parents, backward(g)):
                if pg is None or parent.tape is not self:
                    continue
                if parent._id in grads:
                    grads[parent._id] = grads[parent._id] + pg
                else:
                    grads[parent._id] = pg
        return [grads.get(v._id, np.zeros(v.shape)) if v.tape is self else np.zeros(v.shape) for v in wrt]


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _tape_of(*vs: Var) -> GradientTape | None:
    tape = None
    for v in vs:
        if v.tape is not None:
            if tape is not None and v.tape is not tape:
                raise TapeError("operands belong to different tapes")
            tape = v.tape
    return tape


def _apply(value, parents: tuple[Var, ...], backward: Backward) -> Var:
    tape = _tape_of(*parents)
    if tape is None:
        return Var(value)
    return tape._record(value, parents, backward)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ------------------------------------------------------------------


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return _apply(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    return _apply(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)

    def backward(g):
        return (
            _unbroadcast(g * b.value, a.shape) if a.tracked else None,
            _unbroadcast(g * a.value, b.shape) if b.tracked else None,
        )

    return _apply(a.value * b.value, (a, b), backward)


def neg(a) -> Var:
    a = _lift(a)
    return _apply(-a.value, (a,), lambda g: (-g,))


def square(a) -> Var:
    a = _lift(a)
    return _apply(a.value * a.value, (a,), lambda g: (2.0 * a.value * g,))


def exp(a) -> Var:
    a = _lift(a)
    y = np.exp(a.value)
    return _apply(y, (a,), lambda g: (g * y,))


def tanh(a) -> Var:
    a = _lift(a)
    y = np.tanh(a.value)
    return _apply(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a) -> Var:
    a = _lift(a)
    on = a.value > 0
    return _apply(np.where(on, a.value, 0.0), (a,), lambda g: (g * on,))


def clip(a, lo: float, hi: float) -> Var:
    """Clamp to ``[lo, hi]``; the gradient is zero where the clamp is active."""
    a = _lift(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _apply(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


# -- linear algebra and reductions --------------------------------------------------


def matmul(a, b) -> Var:
    """``a @ b`` for 2-D operands."""
    a, b = _lift(a), _lift(b)

    def backward(g):
        return (g @ b.value.T if a.tracked else None, a.value.T @ g if b.tracked else None)

    return _apply(a.value @ b.value, (a, b), backward)


def sum(a, axis: int | None = None) -> Var:  # noqa: A001 - mirrors numpy naming
    a = _lift(a)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _apply(np.sum(a.value, axis=axis), (a,), backward)


def mean(a) -> Var:
    a = _lift(a)
    n = a.value.size
    return _apply(np.mean(a.value), (a,), lambda g: (np.full(a.shape, g / n),))


def _softmax(v: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(v - np.max(v, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def logsumexp(a, axis: int = -1) -> Var:
    a = _lift(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    y = np.log(np.sum(np.exp(a.value - m), axis=axis)) + np.squeeze(m, axis=axis)
    return _apply(y, (a,), lambda g: (np.expand_dims(g, axis) * _softmax(a.value, axis),))


def log_softmax(a, axis: int = -1) -> Var:
    a = _lift(a)
    m = np.max(a.value, axis=axis, keepdims=True)
    y = a.value - m - np.log(np.sum(np.exp(a.value - m), axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * np.sum(g, axis=axis, keepdims=True),)

    return _apply(y, (a,), backward)


# -- indexing -------------------------------------------------------------------------


def reshape(a, shape: tuple[int, ...]) -> Var:
    a = _lift(a)
    return _apply(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def getitem(a, key) -> Var:
    """Basic (slice) indexing."""
    a = _lift(a)

    def backward(g):
        out = np.zeros(a.shape)
        out[key] = g
        return (out,)

    return _apply(a.value[key], (a,), backward)


def take(a, indices, axis: int = -1) -> Var:
    """Gather along ``axis``; repeated indices accumulate gradient."""
    a = _lift(a)
    indices = np.asarray(indices, dtype=np.intp)

    def backward(g):
        out = np.zeros(a.shape)
        np.add.at(np.moveaxis(out, axis, -1), (..., indices), np.moveaxis(g, axis, -1))
        return (out,)

    return _apply(np.take(a.value, indices, axis=axis), (a,), backward)


# -- packed triangular factors -----------------------------------------------------------


def exp_diag(u, n: int) -> Var:
    """Tape version of :func:`fullmdn.linalg.exp_diag` on packed factors ``(..., P)``."""
    u = _lift(u)
    y = linalg._exp_diag(u.value, n)
    d = linalg.diag_indices(n)
    raw_d = u.value[..., d]
    inside = (raw_d >= -linalg.LOG_DIAG_BOUND) & (raw_d <= linalg.LOG_DIAG_BOUND)

    def backward(g):
        out = np.array(g, copy=True)
        out[..., d] = g[..., d] * y[..., d] * inside
        return (out,)

    return _apply(y, (u,), backward)


def tri_matvec(c, v, n: int) -> Var:
    """``ubar @ v`` for packed upper-triangular ``c`` (..., P) and ``v`` (..., N)."""
    c, v = _lift(c), _lift(v)
    rows, cols = linalg.triu_rows_cols(n)

    def backward(g):
        gc = g[..., rows] * v.value[..., cols]
        gv = linalg._tri_rmatvec(c.value, g, n)
        return (_unbroadcast(gc, c.shape), _unbroadcast(gv, v.shape))

    return _apply(linalg._tri_matvec(c.value, v.value, n), (c, v), backward)
