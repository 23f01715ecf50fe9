"""Reverse-mode automatic differentiation over dense float64 arrays.

Define-by-run: operations executed while a Tape is active on the current
thread are recorded and can be differentiated with a single reverse sweep
over the recorded nodes. Without an active tape the same functions are
plain numpy compute, which is what evaluation-mode forwards use.

Gradient arrays handed out by Gradients.get must be treated as read-only.
"""

from __future__ import annotations

import threading
from typing import Callable

import numpy as np

from .errors import ShapeError

_LOCAL = threading.local()


def _active_tape():
    return getattr(_LOCAL, "tape", None)


class Tensor:
    """Dense float64 array participating in autodiff.

    Operations never mutate tensor values. The optimizer is the single
    writer and only touches parameter tensors between forward passes.
    """

    __slots__ = ("value",)

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


_Rule = Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of one forward pass, differentiable in reverse.

    Use as a context manager; at most one tape records per thread at a
    time. The node list is topologically ordered by construction (an
    op's inputs always exist before its output is recorded), so a single
    reverse walk visits every node exactly once.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], _Rule]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise RuntimeError("another Tape is already recording on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _LOCAL.tape = None

    def __len__(self) -> int:
        return len(self._nodes)

    def backward(self, loss: Tensor) -> "Gradients":
        """Return d(loss)/d(tensor) for every tensor recorded on this tape.

        Tensors that do not influence the loss never receive an entry;
        Gradients.get reports zeros for them. Backward does not mutate
        the tape, so repeated calls yield identical results.
        """
        if loss.value.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.value.shape}")
        table: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for out, inputs, rule in reversed(self._nodes):
            gout = table.get(id(out))
            if gout is None:
                continue
            for tensor, piece in zip(inputs, rule(gout)):
                if piece is None:
                    continue
                held = table.get(id(tensor))
                # accumulate out of place: pieces may alias gout or input buffers
                table[id(tensor)] = piece if held is None else held + piece
        return Gradients(self, table)


class Gradients:
    """Gradient lookup for one backward sweep; zeros off the loss path."""

    def __init__(self, tape: Tape, table: dict[int, np.ndarray]):
        self._tape = tape  # keeps recorded tensors (and their ids) alive
        self._table = table

    def get(self, tensor: Tensor) -> np.ndarray:
        got = self._table.get(id(tensor))
        if got is None:
            return np.zeros_like(tensor.value)
        return got

    def __contains__(self, tensor: Tensor) -> bool:
        return id(tensor) in self._table


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule: _Rule) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        tape._nodes.append((out, inputs, rule))
    return out


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"expected Tensor or scalar, got {type(x).__name__}")


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.value.shape, b.value.shape)
    except ValueError:
        raise ShapeError(
            f"{op}: shapes {a.value.shape} and {b.value.shape} are incompatible"
        ) from None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b) -> Tensor:
    """Elementwise a + b; b may be a scalar. Numpy broadcasting applies."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    out = Tensor(a.value + b.value)
    ash, bsh = a.value.shape, b.value.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(g, bsh)))


def sub(a: Tensor, b) -> Tensor:
    """Elementwise a - b; b may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    out = Tensor(a.value - b.value)
    ash, bsh = a.value.shape, b.value.shape
    return _record(out, (a, b), lambda g: (_unbroadcast(g, ash), _unbroadcast(-g, bsh)))


def mul(a: Tensor, b) -> Tensor:
    """Elementwise a * b; b may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    out = Tensor(av * bv)
    ash, bsh = av.shape, bv.shape
    return _record(
        out, (a, b), lambda g: (_unbroadcast(g * bv, ash), _unbroadcast(g * av, bsh))
    )


def div(a: Tensor, b) -> Tensor:
    """Elementwise a / b; b may be a scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("div", a, b)
    av, bv = a.value, b.value
    out = Tensor(av / bv)
    ash, bsh = av.shape, bv.shape
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, ash), _unbroadcast(-g * av / (bv * bv), bsh)),
    )


def scale(a: Tensor, s: float) -> Tensor:
    """a * s for a python scalar s."""
    s = float(s)
    out = Tensor(a.value * s)
    return _record(out, (a,), lambda g: (g * s,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(
            f"matmul: operands must be 2-D, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions disagree, {a.value.shape} vs {b.value.shape}"
        )
    av, bv = a.value, b.value
    out = Tensor(av @ bv)
    return _record(out, (a, b), lambda g: (g @ bv.T, av.T @ g))


def transpose(a: Tensor) -> Tensor:
    """Transpose of a 2-D tensor."""
    if a.value.ndim != 2:
        raise ShapeError(f"transpose: operand must be 2-D, got {a.value.shape}")
    out = Tensor(a.value.T)
    return _record(out, (a,), lambda g: (g.T,))


def relu(a: Tensor) -> Tensor:
    """max(a, 0); subgradient at 0 is 0."""
    av = a.value
    out = Tensor(np.maximum(av, 0.0))
    return _record(out, (a,), lambda g: (g * (av > 0.0),))


def _sigmoid_values(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, computed piecewise so large |x| never overflows."""
    ov = _sigmoid_values(np.asarray(a.value, dtype=np.float64))
    out = Tensor(ov)
    return _record(out, (a,), lambda g: (g * ov * (1.0 - ov),))


def exp(a: Tensor) -> Tensor:
    ov = np.exp(a.value)
    out = Tensor(ov)
    return _record(out, (a,), lambda g: (g * ov,))


def log(a: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with a floor, inputs are clamped to at least `floor`
    and the gradient is zero in the clamped region."""
    av = a.value
    if floor is None:
        out = Tensor(np.log(av))
        return _record(out, (a,), lambda g: (g / av,))
    f = float(floor)
    out = Tensor(np.log(np.maximum(av, f)))
    return _record(out, (a,), lambda g: (np.where(av > f, g / np.maximum(av, f), 0.0),))


def power(a: Tensor, p: float) -> Tensor:
    """Elementwise a ** p for scalar p (positive base assumed for non-integer p)."""
    p = float(p)
    av = a.value
    out = Tensor(av**p)
    return _record(out, (a,), lambda g: (g * p * av ** (p - 1.0),))


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.value.sum(axis=axis, keepdims=keepdims))
    ash = a.value.shape

    def rule(g: np.ndarray):
        if axis is None:
            return (np.full(ash, g if g.ndim == 0 else g.reshape(())),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ash),)

    return _record(out, (a,), rule)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ash = a.value.shape
    count = a.value.size if axis is None else ash[axis]
    out = Tensor(a.value.mean(axis=axis, keepdims=keepdims))

    def rule(g: np.ndarray):
        if axis is None:
            return (np.full(ash, (g if g.ndim == 0 else g.reshape(())) / count),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ash) / count,)

    return _record(out, (a,), rule)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two 2-D tensors along the feature (column) axis."""
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(
            f"concat_cols: need matching row counts, got {a.value.shape} and {b.value.shape}"
        )
    k = a.value.shape[1]
    out = Tensor(np.concatenate([a.value, b.value], axis=1))
    return _record(out, (a, b), lambda g: (g[:, :k], g[:, k:]))


def softmax(a: Tensor) -> Tensor:
    """Row-wise softmax over the last axis, with max subtraction."""
    av = a.value
    if av.shape[-1] < 2:
        raise ShapeError(f"softmax: last axis must have >= 2 entries, got {av.shape}")
    shifted = av - av.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    ov = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(ov)
    return _record(
        out, (a,), lambda g: (ov * (g - (g * ov).sum(axis=-1, keepdims=True)),)
    )
