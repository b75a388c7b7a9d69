"""Reverse-mode differentiation over dense numpy arrays.

A ``Tape`` records every operation applied to tensors created from it.
``Tape.backward`` walks the recording in reverse creation order, which is
a valid topological order, and returns one gradient per watched
parameter array. A recording can be consumed exactly once.

Only the operations the diffusion models need are provided; there is no
general broadcasting.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from typing import Any

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, log_expit

from socialdiff.enums import Activation
from socialdiff.exceptions import NonFiniteError, TapeError
from socialdiff.params import GradientBundle, ParameterSet

Array = NDArray[Any]
VectorJacobian = Callable[[Array], Sequence[Array | None]]

LEAKY_SLOPE = 0.01


class Tensor:
    """A value produced on a tape, with enough history to differentiate."""

    __slots__ = ("_index", "_parents", "_vjp", "name", "op", "tape", "value")

    def __init__(
        self,
        tape: Tape,
        value: Array,
        op: str,
        parents: tuple[Tensor, ...] = (),
        vjp: VectorJacobian | None = None,
        name: str = "",
    ) -> None:
        self.tape = tape
        self.value = value
        self.op = op
        self.name = name
        self._parents = parents
        self._vjp = vjp
        self._index = -1

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def numpy(self) -> Array:
        return self.value

    def item(self) -> float:
        return float(self.value)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __neg__(self) -> Tensor:
        return scale(self, -1.0)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"


class Tape:
    """Single-use recording of tensor operations."""

    def __init__(
        self, *, recording: bool = True, dtype: Any = np.float64
    ) -> None:
        self.recording = recording
        self.dtype = np.dtype(dtype)
        self._nodes: list[Tensor] = []
        self._watched: dict[str, Tensor] = {}
        self._consumed = False

    @property
    def consumed(self) -> bool:
        return self._consumed

    def watch(self, name: str, array: ArrayLike) -> Tensor:
        """Register a parameter array as a differentiable leaf."""
        if name in self._watched:
            raise TapeError(f"Parameter {name!r} is already watched")
        value = np.array(array, dtype=self.dtype)
        leaf = self._record(value, "leaf", (), None)
        leaf.name = name
        self._watched[name] = leaf
        return leaf

    def watch_parameters(self, params: ParameterSet) -> dict[str, Tensor]:
        return {name: self.watch(name, params[name]) for name in params}

    def constant(self, array: ArrayLike) -> Tensor:
        """Wrap an array that never receives a gradient."""
        value = np.asarray(array, dtype=self.dtype)
        return Tensor(self, value, "constant")

    def record(
        self,
        value: Array,
        op: str,
        parents: tuple[Tensor, ...],
        vjp: VectorJacobian,
    ) -> Tensor:
        for parent in parents:
            if parent.tape is not self:
                raise TapeError(
                    f"Operation {op!r} mixes tensors from different tapes"
                )
        return self._record(value, op, parents, vjp)

    def _record(
        self,
        value: Array,
        op: str,
        parents: tuple[Tensor, ...],
        vjp: VectorJacobian | None,
    ) -> Tensor:
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(op, context={"shape": tuple(value.shape)})
        if not self.recording:
            return Tensor(self, value, op)
        tensor = Tensor(self, value, op, parents, vjp)
        tensor._index = len(self._nodes)
        self._nodes.append(tensor)
        return tensor

    def gradients(self, loss: Tensor) -> dict[str, Array]:
        """Gradients of a scalar loss for every watched leaf it reaches."""
        if self._consumed:
            raise TapeError("backward was already called on this recording")
        if not self.recording:
            raise TapeError("tape was created with recording disabled")
        if loss.tape is not self or loss._index < 0:
            raise TapeError("loss was not produced by this recording")
        if loss.value.size != 1:
            raise TapeError(
                "backward needs a scalar loss",
                context={"shape": loss.shape},
            )
        self._consumed = True

        pending: dict[int, Array] = {loss._index: np.ones_like(loss.value)}
        reached: dict[str, Array] = {}
        for node in reversed(self._nodes[: loss._index + 1]):
            grad = pending.pop(node._index, None)
            if grad is None:
                continue
            if node._vjp is None:
                if node.name:
                    reached[node.name] = grad
                continue
            for parent, parent_grad in zip(
                node._parents, node._vjp(grad), strict=True
            ):
                if parent_grad is None or parent._index < 0:
                    continue
                current = pending.get(parent._index)
                pending[parent._index] = (
                    parent_grad if current is None else current + parent_grad
                )
        self._nodes.clear()
        return reached

    def backward(self, loss: Tensor, params: ParameterSet) -> GradientBundle:
        """Gradient bundle of ``loss`` congruent with ``params``.

        Parameters the loss does not depend on get zero gradients.
        """
        reached = self.gradients(loss)
        arrays: dict[str, Array] = {}
        for name in params:
            grad = reached.get(name)
            if grad is None:
                grad = np.zeros(params[name].shape, dtype=self.dtype)
            if not np.all(np.isfinite(grad)):
                raise NonFiniteError("backward", context={"parameter": name})
            arrays[name] = grad
        return GradientBundle(arrays)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return a.tape.record(a.value + b.value, "add", (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return a.tape.record(a.value - b.value, "sub", (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)
    av, bv = a.value, b.value
    return a.tape.record(av * bv, "mul", (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, factor: float) -> Tensor:
    return a.tape.record(
        a.value * factor, "scale", (a,), lambda g: (g * factor,)
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape.record(
        av @ bv, "matmul", (a, b), lambda g: (g @ bv.T, av.T @ g)
    )


def add_row(x: Tensor, row: Tensor) -> Tensor:
    """Add a length-h vector to every row of an n×h matrix."""
    if x.value.ndim != 2 or row.shape != (x.shape[1],):
        raise ValueError(f"add_row: shape mismatch {x.shape} + {row.shape}")
    return x.tape.record(
        x.value + row.value,
        "add_row",
        (x, row),
        lambda g: (g, g.sum(axis=0)),
    )


def concat(parts: Sequence[Tensor], axis: int = 1) -> Tensor:
    if not parts:
        raise ValueError("concat: nothing to concatenate")
    values = [part.value for part in parts]
    others = {
        tuple(np.delete(np.array(v.shape), axis)) for v in values
    }
    if len(others) != 1:
        raise ValueError(
            f"concat: shape mismatch {[part.shape for part in parts]}"
        )
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def vjp(g: Array) -> Sequence[Array]:
        return np.split(g, bounds, axis=axis)

    return parts[0].tape.record(
        np.concatenate(values, axis=axis), "concat", tuple(parts), vjp
    )


def row_gather(x: Tensor, index: Array) -> Tensor:
    """Rows of ``x`` selected by ``index`` (repeats allowed)."""
    index = np.asarray(index, dtype=np.int64)
    rows = x.shape[0]

    def vjp(g: Array) -> Sequence[Array]:
        out = np.zeros((rows, *g.shape[1:]), dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return x.tape.record(x.value[index], "row_gather", (x,), vjp)


def segment_sum(x: Tensor, segments: Array, num_segments: int) -> Tensor:
    """Sum the rows of ``x`` that share a segment key."""
    segments = np.asarray(segments, dtype=np.int64)
    if segments.shape != (x.shape[0],):
        raise ValueError(
            f"segment_sum: {segments.shape} keys for {x.shape[0]} rows"
        )
    out = np.zeros((num_segments, *x.shape[1:]), dtype=x.value.dtype)
    np.add.at(out, segments, x.value)
    return x.tape.record(
        out, "segment_sum", (x,), lambda g: (g[segments],)
    )


def scale_rows(weights: Tensor, x: Tensor) -> Tensor:
    """Multiply row e of an E×D matrix by weight e."""
    if weights.value.ndim != 1 or weights.shape[0] != x.shape[0]:
        raise ValueError(
            f"scale_rows: shape mismatch {weights.shape} * {x.shape}"
        )
    wv, xv = weights.value, x.value

    def vjp(g: Array) -> Sequence[Array]:
        return (np.einsum("ij,ij->i", g, xv), wv[:, None] * g)

    return x.tape.record(wv[:, None] * xv, "scale_rows", (weights, x), vjp)


def row_dot(a: Tensor, b: Tensor) -> Tensor:
    """Inner product of matching rows."""
    _same_shape("row_dot", a, b)
    av, bv = a.value, b.value

    def vjp(g: Array) -> Sequence[Array]:
        return (g[:, None] * bv, g[:, None] * av)

    return a.tape.record(
        np.einsum("ij,ij->i", av, bv), "row_dot", (a, b), vjp
    )


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    original = x.shape
    return x.tape.record(
        x.value.reshape(shape),
        "reshape",
        (x,),
        lambda g: (g.reshape(original),),
    )


def total(x: Tensor) -> Tensor:
    ones = np.ones_like(x.value)
    return x.tape.record(
        np.asarray(x.value.sum()), "total", (x,), lambda g: (g * ones,)
    )


def square_sum(x: Tensor) -> Tensor:
    xv = x.value
    return x.tape.record(
        np.asarray(np.sum(xv * xv)),
        "square_sum",
        (x,),
        lambda g: (2.0 * g * xv,),
    )


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.value)
    return x.tape.record(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def log_sigmoid(x: Tensor) -> Tensor:
    xv = x.value
    return x.tape.record(
        log_expit(xv), "log_sigmoid", (x,), lambda g: (g * expit(-xv),)
    )


def activation(x: Tensor, kind: Activation | str) -> Tensor:
    """The configurable transformation function g."""
    kind = Activation(kind)
    if kind is Activation.IDENTITY:
        return x
    xv = x.value
    if kind is Activation.TANH:
        y = np.tanh(xv)
        return x.tape.record(y, "tanh", (x,), lambda g: (g * (1.0 - y * y),))
    slope = np.where(xv > 0, 1.0, LEAKY_SLOPE).astype(xv.dtype)
    return x.tape.record(
        xv * slope, "leaky_relu", (x,), lambda g: (g * slope,)
    )


def segment_max(values: Array, segments: Array, num_segments: int) -> Array:
    out = np.full(num_segments, -np.inf, dtype=values.dtype)
    np.maximum.at(out, segments, values)
    return out


def exp_normalize(
    scores: Tensor,
    segments: Array | None = None,
    num_segments: int | None = None,
) -> Tensor:
    """Softmax of a score vector within each segment.

    With no segments the whole vector is one segment. The per-segment
    maximum is subtracted before exponentiation.
    """
    if scores.value.ndim != 1:
        raise ValueError(
            f"exp_normalize: expected a vector, got {scores.shape}"
        )
    if segments is None:
        segments = np.zeros(scores.shape[0], dtype=np.int64)
        num_segments = 1
    segments = np.asarray(segments, dtype=np.int64)
    if num_segments is None:
        num_segments = int(segments.max()) + 1 if segments.size else 0
    sv = scores.value
    shifted = sv - segment_max(sv, segments, num_segments)[segments]
    weights = np.exp(shifted)
    norm = np.bincount(segments, weights=weights, minlength=num_segments)
    y = weights / norm[segments]

    def vjp(g: Array) -> Sequence[Array]:
        inner = np.bincount(segments, weights=g * y, minlength=num_segments)
        return (y * (g - inner[segments]),)

    return scores.tape.record(
        y.astype(sv.dtype), "exp_normalize", (scores,), vjp
    )


def lookup(leaves: Mapping[str, Tensor], name: str) -> Tensor:
    try:
        return leaves[name]
    except KeyError:
        raise TapeError(f"Parameter {name!r} is not watched") from None
