"""
Reverse-mode automatic differentiation over dense float64 arrays.

A ``Graph`` is an append-only Wengert list: every call to ``Graph.forward``
appends one record (primitive, input indices, output value, constant
attributes) and returns a ``Node`` handle. ``Graph.backward`` walks the list
in reverse from a scalar root and returns a gradient for every leaf.

Broadcasting is deliberately narrow. Elementwise binaries accept equal shapes
or a 0-d operand; ``outer_diff`` is the only other broadcast form. Structural
reshaping (column slices, embedding lookups, bias tiling, flattening) goes
through ``take``, a gather by a constant index array.

Graphs are single-threaded; distinct graphs may be used from distinct threads.
Values stored in a graph are read-only arrays.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any

import numpy as np
import numpy.typing as npt

from .errors import DomainError, NonFiniteError, ShapeError

Tensor = npt.NDArray[np.float64]

# Lower bound used in the derivative of sqrt so d/du sqrt(u) stays finite at u == 0.
SQRT_GRAD_FLOOR = 1e-12


class Primitive(StrEnum):
    LEAF = "leaf"
    CONSTANT = "constant"
    ADD = "add"
    SUBTRACT = "subtract"
    MULTIPLY = "multiply"
    DIVIDE = "divide"
    MATMUL = "matmul"
    EXP = "exp"
    LOG = "log"
    SQRT = "sqrt"
    ABS = "abs"
    SQUARE = "square"
    SOFTPLUS = "softplus"
    RELU = "relu"
    OUTER_DIFF = "outer_diff"
    MASKED_WEIGHTED_SUM = "masked_weighted_sum"
    SUM = "sum"
    MEAN = "mean"
    SCALE = "scale"
    CLAMP = "clamp"
    DETACH = "detach"
    TAKE = "take"


def _all_finite(arr: Tensor) -> bool:
    # A finite sum implies finite entries; an overflowing sum falls back to the elementwise test.
    with np.errstate(over="ignore", invalid="ignore"):
        total = np.sum(arr)
    return bool(np.isfinite(total)) or bool(np.all(np.isfinite(arr)))


def as_tensor(values: Any) -> Tensor:
    """Copy *values* into a read-only float64 array, rejecting NaN/Inf."""
    arr = np.array(values, dtype=np.float64)
    if not _all_finite(arr):
        raise NonFiniteError("tensor contains non-finite values")
    arr.setflags(write=False)
    return arr


def _frozen(arr: Any) -> Tensor:
    out = np.asarray(arr, dtype=np.float64)
    if out.flags.writeable:
        out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Node handles
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class Node:
    """Reference to one record of a ``Graph``."""

    graph: Graph
    index: int

    @property
    def value(self) -> Tensor:
        return self.graph.value(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def _operand(self, other: Node | float | npt.ArrayLike) -> Node:
        if isinstance(other, Node):
            return other
        return self.graph.constant(other)

    def __add__(self, other: Node | float | npt.ArrayLike) -> Node:
        return self.graph.forward(Primitive.ADD, (self, self._operand(other)))

    def __radd__(self, other: float | npt.ArrayLike) -> Node:
        return self.graph.forward(Primitive.ADD, (self._operand(other), self))

    def __sub__(self, other: Node | float | npt.ArrayLike) -> Node:
        return self.graph.forward(Primitive.SUBTRACT, (self, self._operand(other)))

    def __rsub__(self, other: float | npt.ArrayLike) -> Node:
        return self.graph.forward(Primitive.SUBTRACT, (self._operand(other), self))

    def __mul__(self, other: Node | float | npt.ArrayLike) -> Node:
        if isinstance(other, int | float):
            return self.graph.forward(Primitive.SCALE, (self,), factor=float(other))
        return self.graph.forward(Primitive.MULTIPLY, (self, self._operand(other)))

    def __rmul__(self, other: float | npt.ArrayLike) -> Node:
        return self.__mul__(other)

    def __truediv__(self, other: Node | float | npt.ArrayLike) -> Node:
        if isinstance(other, int | float):
            return self.graph.forward(Primitive.SCALE, (self,), factor=1.0 / float(other))
        return self.graph.forward(Primitive.DIVIDE, (self, self._operand(other)))

    def __matmul__(self, other: Node | npt.ArrayLike) -> Node:
        return self.graph.forward(Primitive.MATMUL, (self, self._operand(other)))

    def __neg__(self) -> Node:
        return self.graph.forward(Primitive.SCALE, (self,), factor=-1.0)


# ---------------------------------------------------------------------------
# Primitive rules
# ---------------------------------------------------------------------------

Grad = Tensor | None


@dataclass(frozen=True, slots=True)
class _Rule:
    arity: int
    forward: Callable[[list[Tensor], Mapping[str, Any]], Tensor]
    backward: Callable[[Tensor, list[Tensor], Tensor, Mapping[str, Any]], tuple[Grad, ...]]
    check: Callable[[Primitive, list[Tensor], Mapping[str, Any]], None] | None = None


def _check_elementwise(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    a, b = xs
    if a.shape != b.shape and a.shape != () and b.shape != ():
        raise ShapeError(f"{prim}: shapes {a.shape} and {b.shape} do not conform (equal shapes or a scalar required)")


def _check_matmul(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    a, b = xs
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"{prim}: shapes {a.shape} and {b.shape} do not conform")


def _check_log(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    if np.any(xs[0] <= 0.0):
        raise DomainError(f"{prim}: input must be strictly positive (min {float(np.min(xs[0]))!r})")


def _check_sqrt(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    if np.any(xs[0] < 0.0):
        raise DomainError(f"{prim}: input must be non-negative (min {float(np.min(xs[0]))!r})")


def _check_outer(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    if xs[0].ndim < 1:
        raise ShapeError(f"{prim}: input must have at least one axis, got shape {xs[0].shape}")


def _check_weighted(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    weights = attrs["weights"]
    if weights.shape != xs[0].shape:
        raise ShapeError(f"{prim}: shapes {xs[0].shape} and {weights.shape} do not conform")


def _check_mean(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    if xs[0].size == 0:
        raise DomainError(f"{prim}: mean of an empty tensor is undefined")


def _check_clamp(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    if attrs["lo"] > attrs["hi"]:
        raise DomainError(f"{prim}: lo {attrs['lo']!r} exceeds hi {attrs['hi']!r}")


def _check_take(prim: Primitive, xs: list[Tensor], attrs: Mapping[str, Any]) -> None:
    indices = attrs["indices"]
    if indices.size and (indices.min() < 0 or indices.max() >= xs[0].size):
        raise DomainError(f"{prim}: index out of range for a tensor of {xs[0].size} values")


def _unbroadcast(grad: Tensor, shape: tuple[int, ...]) -> Tensor:
    if shape == () and grad.shape != ():
        return np.asarray(grad.sum())
    return grad


def _binary(grad_a: Callable[..., Tensor], grad_b: Callable[..., Tensor]):
    def backward(g: Tensor, xs: list[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Grad, ...]:
        a, b = xs
        return _unbroadcast(grad_a(g, a, b), a.shape), _unbroadcast(grad_b(g, a, b), b.shape)

    return backward


def _take_backward(g: Tensor, xs: list[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Grad, ...]:
    acc = np.zeros(xs[0].size, dtype=np.float64)
    np.add.at(acc, attrs["indices"].reshape(-1), g.reshape(-1))
    return (acc.reshape(xs[0].shape),)


def _outer_backward(g: Tensor, xs: list[Tensor], out: Tensor, attrs: Mapping[str, Any]) -> tuple[Grad, ...]:
    return (g.sum(axis=-1) - g.sum(axis=-2),)


def _sigmoid(x: Tensor) -> Tensor:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_RULES: dict[Primitive, _Rule] = {
    Primitive.ADD: _Rule(
        2,
        lambda xs, _: xs[0] + xs[1],
        _binary(lambda g, a, b: g, lambda g, a, b: g),
        _check_elementwise,
    ),
    Primitive.SUBTRACT: _Rule(
        2,
        lambda xs, _: xs[0] - xs[1],
        _binary(lambda g, a, b: g, lambda g, a, b: -g),
        _check_elementwise,
    ),
    Primitive.MULTIPLY: _Rule(
        2,
        lambda xs, _: xs[0] * xs[1],
        _binary(lambda g, a, b: g * b, lambda g, a, b: g * a),
        _check_elementwise,
    ),
    Primitive.DIVIDE: _Rule(
        2,
        lambda xs, _: xs[0] / xs[1],
        _binary(lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b)),
        _check_elementwise,
    ),
    Primitive.MATMUL: _Rule(
        2,
        lambda xs, _: xs[0] @ xs[1],
        lambda g, xs, out, _: (g @ xs[1].T, xs[0].T @ g),
        _check_matmul,
    ),
    Primitive.EXP: _Rule(1, lambda xs, _: np.exp(xs[0]), lambda g, xs, out, _: (g * out,)),
    Primitive.LOG: _Rule(1, lambda xs, _: np.log(xs[0]), lambda g, xs, out, _: (g / xs[0],), _check_log),
    Primitive.SQRT: _Rule(
        1,
        lambda xs, _: np.sqrt(xs[0]),
        lambda g, xs, out, _: (g * 0.5 / np.sqrt(np.maximum(xs[0], SQRT_GRAD_FLOOR)),),
        _check_sqrt,
    ),
    # np.sign(0) == 0, which is the subgradient used at the kink.
    Primitive.ABS: _Rule(1, lambda xs, _: np.abs(xs[0]), lambda g, xs, out, _: (g * np.sign(xs[0]),)),
    Primitive.SQUARE: _Rule(1, lambda xs, _: xs[0] * xs[0], lambda g, xs, out, _: (2.0 * g * xs[0],)),
    Primitive.SOFTPLUS: _Rule(
        1,
        lambda xs, _: np.logaddexp(0.0, xs[0]),
        lambda g, xs, out, _: (g * _sigmoid(xs[0]),),
    ),
    Primitive.RELU: _Rule(
        1,
        lambda xs, _: np.maximum(xs[0], 0.0),
        lambda g, xs, out, _: (g * (xs[0] > 0.0),),
    ),
    Primitive.OUTER_DIFF: _Rule(
        1,
        lambda xs, _: xs[0][..., :, None] - xs[0][..., None, :],
        _outer_backward,
        _check_outer,
    ),
    Primitive.MASKED_WEIGHTED_SUM: _Rule(
        1,
        lambda xs, attrs: np.asarray(np.sum(attrs["weights"] * xs[0])),
        lambda g, xs, out, attrs: (g * attrs["weights"],),
        _check_weighted,
    ),
    Primitive.SUM: _Rule(
        1,
        lambda xs, _: np.asarray(xs[0].sum()),
        lambda g, xs, out, _: (np.full(xs[0].shape, float(g)),),
    ),
    Primitive.MEAN: _Rule(
        1,
        lambda xs, _: np.asarray(xs[0].mean()),
        lambda g, xs, out, _: (np.full(xs[0].shape, float(g) / xs[0].size),),
        _check_mean,
    ),
    Primitive.SCALE: _Rule(
        1,
        lambda xs, attrs: xs[0] * attrs["factor"],
        lambda g, xs, out, attrs: (g * attrs["factor"],),
    ),
    Primitive.CLAMP: _Rule(
        1,
        lambda xs, attrs: np.clip(xs[0], attrs["lo"], attrs["hi"]),
        lambda g, xs, out, attrs: (g * ((xs[0] >= attrs["lo"]) & (xs[0] <= attrs["hi"])),),
        _check_clamp,
    ),
    Primitive.DETACH: _Rule(1, lambda xs, _: xs[0].copy(), lambda g, xs, out, _: (None,)),
    Primitive.TAKE: _Rule(
        1,
        lambda xs, attrs: xs[0].reshape(-1)[attrs["indices"]],
        _take_backward,
        _check_take,
    ),
}

PRIMITIVE_SET = frozenset(_RULES)


# ---------------------------------------------------------------------------
# Graph
# ---------------------------------------------------------------------------


@dataclass(frozen=True, slots=True)
class _Record:
    primitive: Primitive
    inputs: tuple[int, ...]
    value: Tensor
    attrs: Mapping[str, Any] = field(default_factory=dict)


class Graph:
    """Append-only computation graph with designated parameter leaves."""

    def __init__(self) -> None:
        self._records: list[_Record] = []
        self._leaves: list[int] = []

    def __len__(self) -> int:
        return len(self._records)

    # -- construction --------------------------------------------------------

    def leaf(self, values: npt.ArrayLike) -> Node:
        """Add a differentiable parameter leaf."""
        node = self._append(_Record(Primitive.LEAF, (), as_tensor(values)))
        self._leaves.append(node.index)
        return node

    def constant(self, values: npt.ArrayLike) -> Node:
        """Add a constant (no gradient is reported for it)."""
        return self._append(_Record(Primitive.CONSTANT, (), as_tensor(values)))

    def forward(self, primitive: Primitive | str, inputs: Sequence[Node], **attrs: Any) -> Node:
        """Apply *primitive* to *inputs* and append the result."""
        prim = Primitive(primitive)
        rule = _RULES.get(prim)
        if rule is None:
            raise DomainError(f"{prim} is not a differentiable primitive")
        if len(inputs) != rule.arity:
            raise ShapeError(f"{prim}: expected {rule.arity} input(s), got {len(inputs)}")
        for node in inputs:
            if node.graph is not self:
                raise ShapeError(f"{prim}: input node belongs to another graph")

        frozen_attrs = _freeze_attrs(attrs)
        xs = [self._records[node.index].value for node in inputs]
        if rule.check is not None:
            rule.check(prim, xs, frozen_attrs)
        with np.errstate(all="ignore"):
            out = np.asarray(rule.forward(xs, frozen_attrs), dtype=np.float64)
        if not _all_finite(out):
            raise NonFiniteError(f"{prim}: produced non-finite values from input shapes {[x.shape for x in xs]}")
        return self._append(_Record(prim, tuple(node.index for node in inputs), _frozen(out), frozen_attrs))

    def _append(self, record: _Record) -> Node:
        self._records.append(record)
        return Node(self, len(self._records) - 1)

    # -- inspection ----------------------------------------------------------

    def value(self, node: Node) -> Tensor:
        return self._records[node.index].value

    def primitive(self, node: Node) -> Primitive:
        return self._records[node.index].primitive

    @property
    def parameters(self) -> list[Node]:
        return [Node(self, i) for i in self._leaves]

    def contains(self, primitive: Primitive) -> bool:
        return any(record.primitive is primitive for record in self._records)

    # -- differentiation -----------------------------------------------------

    def backward(self, root: Node) -> dict[Node, Tensor]:
        """Return d(root)/d(leaf) for every parameter leaf of the graph.

        Leaves that do not influence *root* (or only through ``detach``) get
        an all-zero gradient of their own shape.
        """
        if root.graph is not self:
            raise ShapeError("backward: root node belongs to another graph")
        root_value = self._records[root.index].value
        if root_value.shape != ():
            raise ShapeError(f"backward: root must be scalar-shaped, got shape {root_value.shape}")

        grads: list[Tensor | None] = [None] * (root.index + 1)
        grads[root.index] = np.ones((), dtype=np.float64)
        for idx in range(root.index, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            record = self._records[idx]
            if not record.inputs:
                continue
            xs = [self._records[i].value for i in record.inputs]
            parts = _RULES[record.primitive].backward(g, xs, record.value, record.attrs)
            for i, part in zip(record.inputs, parts, strict=True):
                if part is None:
                    continue
                prev = grads[i]
                grads[i] = part if prev is None else prev + part

        result: dict[Node, Tensor] = {}
        for i in self._leaves:
            g = grads[i] if i <= root.index else None
            shape = self._records[i].value.shape
            result[Node(self, i)] = _frozen(np.zeros(shape) if g is None else np.array(g, dtype=np.float64))
        return result


def _freeze_attrs(attrs: Mapping[str, Any]) -> Mapping[str, Any]:
    frozen: dict[str, Any] = {}
    for key, value in attrs.items():
        if key == "indices":
            arr = np.array(value, dtype=np.intp)
            arr.setflags(write=False)
            frozen[key] = arr
        elif key == "weights":
            # Frozen in place: callers hand over a private array.
            arr = np.asarray(value, dtype=np.float64)
            if not _all_finite(arr):
                raise NonFiniteError("weights contain non-finite values")
            frozen[key] = _frozen(arr)
        else:
            frozen[key] = float(value)
    return frozen


# ---------------------------------------------------------------------------
# Functional helpers (thin wrappers over Graph.forward)
# ---------------------------------------------------------------------------


def exp(x: Node) -> Node:
    return x.graph.forward(Primitive.EXP, (x,))


def log(x: Node) -> Node:
    return x.graph.forward(Primitive.LOG, (x,))


def sqrt(x: Node) -> Node:
    return x.graph.forward(Primitive.SQRT, (x,))


def absolute(x: Node) -> Node:
    return x.graph.forward(Primitive.ABS, (x,))


def square(x: Node) -> Node:
    return x.graph.forward(Primitive.SQUARE, (x,))


def softplus(x: Node) -> Node:
    return x.graph.forward(Primitive.SOFTPLUS, (x,))


def relu(x: Node) -> Node:
    return x.graph.forward(Primitive.RELU, (x,))


def outer_diff(x: Node) -> Node:
    return x.graph.forward(Primitive.OUTER_DIFF, (x,))


def masked_weighted_sum(x: Node, weights: npt.ArrayLike, mask: npt.ArrayLike | None = None) -> Node:
    """Sum of ``weights * x`` over entries where *mask* is true (constants)."""
    w = np.asarray(weights, dtype=np.float64)
    w = w.copy() if mask is None else np.where(np.asarray(mask, dtype=bool), w, 0.0)
    return x.graph.forward(Primitive.MASKED_WEIGHTED_SUM, (x,), weights=w)


def reduce_sum(x: Node) -> Node:
    return x.graph.forward(Primitive.SUM, (x,))


def reduce_mean(x: Node) -> Node:
    return x.graph.forward(Primitive.MEAN, (x,))


def scale(x: Node, factor: float) -> Node:
    return x.graph.forward(Primitive.SCALE, (x,), factor=factor)


def clamp(x: Node, lo: float, hi: float) -> Node:
    return x.graph.forward(Primitive.CLAMP, (x,), lo=lo, hi=hi)


def detach(x: Node) -> Node:
    return x.graph.forward(Primitive.DETACH, (x,))


def take(x: Node, indices: npt.ArrayLike) -> Node:
    """Gather from the row-major flattening of *x*; output shape == indices shape."""
    return x.graph.forward(Primitive.TAKE, (x,), indices=indices)


# ---------------------------------------------------------------------------
# Finite-difference check
# ---------------------------------------------------------------------------


def grad_check(fn: Callable[[Graph, Node], Node], point: npt.ArrayLike, step: float = 1e-5) -> float:
    """Compare the analytic gradient of *fn* at *point* with central differences.

    Returns max |analytic - numeric| / max(1, |analytic|) over coordinates.
    Functions routed through ``detach`` are rejected: a detached edge has zero
    analytic gradient by definition, so finite differences are not an oracle.
    """
    if not step > 0.0:
        raise DomainError(f"grad_check: step must be positive, got {step!r}")
    x0 = as_tensor(point)

    graph = Graph()
    x = graph.leaf(x0)
    root = fn(graph, x)
    if graph.contains(Primitive.DETACH):
        raise DomainError("grad_check: function routes through detach; finite differences do not apply")
    analytic = graph.backward(root)[x].reshape(-1)

    flat = np.array(x0, dtype=np.float64).reshape(-1)
    numeric = np.empty_like(flat)
    for i in range(flat.size):
        plus = flat.copy()
        minus = flat.copy()
        plus[i] += step
        minus[i] -= step
        numeric[i] = (_scalar(fn, plus.reshape(x0.shape)) - _scalar(fn, minus.reshape(x0.shape))) / (2.0 * step)

    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))


def _scalar(fn: Callable[[Graph, Node], Node], values: Tensor) -> float:
    graph = Graph()
    return float(fn(graph, graph.leaf(values)).value)
