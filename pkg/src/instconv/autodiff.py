"""Minimal reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` is an append-only list of :class:`Node` records. Every
forward op computes its value eagerly with numpy, appends one node and
returns a :class:`Var` handle. ``Tape.backward`` sweeps the tape in reverse
and applies the per-op gradient rule registered in ``BACKWARD``.

Feature maps follow the (channels, height, width) layout; scalars are
stored as ``(1, 1, 1)`` arrays.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

DTYPE = np.float64
SCALAR_SHAPE = (1, 1, 1)


class OpKind(str, enum.Enum):
    LEAF = "leaf"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    ADD_CONST = "add_const"
    MUL_CONST = "mul_const"
    ABS = "abs"
    RELU = "relu"
    SOFTPLUS = "softplus"
    SQRT = "sqrt"
    MAX_CONST = "max_const"
    SUM = "sum"
    CONCAT = "concat"
    CONV2D = "conv2d"
    INSTANCE_CONV2D = "instance_conv2d"
    UPSAMPLE = "upsample"
    SOBEL = "sobel"


class TapeError(ValueError):
    """Structural misuse of a tape (unknown ids, non-scalar seeds)."""


@dataclass
class Node:
    id: int
    kind: OpKind
    parents: tuple[int, ...]
    value: np.ndarray
    saved: Any = None


BackwardRule = Callable[["Tape", Node, np.ndarray], Sequence[np.ndarray | None]]
BACKWARD: dict[OpKind, BackwardRule] = {}


def register_backward(kind: OpKind):
    def deco(fn: BackwardRule) -> BackwardRule:
        BACKWARD[kind] = fn
        return fn
    return deco


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, kind: OpKind, inputs: Sequence[int], value: np.ndarray,
               saved: Any = None) -> int:
        n = len(self.nodes)
        for i in inputs:
            if not 0 <= i < n:
                raise TapeError(f"unknown input node id {i} (tape has {n} nodes)")
        self.nodes.append(Node(n, OpKind(kind), tuple(inputs), value, saved))
        return n

    def leaf(self, value) -> "Var":
        arr = np.array(value, dtype=DTYPE)  # copy: recorded values are never mutated
        return Var(self, self.record(OpKind.LEAF, (), arr))

    def value(self, node_id: int) -> np.ndarray:
        return self.nodes[node_id].value

    def backward(self, seed: "int | Var") -> dict[int, np.ndarray]:
        """Gradients of the scalar node ``seed`` w.r.t. all of its ancestors."""
        sid = seed.id if isinstance(seed, Var) else int(seed)
        if not 0 <= sid < len(self.nodes):
            raise TapeError(f"unknown seed id {sid}")
        if self.nodes[sid].value.size != 1:
            raise TapeError(
                f"seed must be scalar, got shape {self.nodes[sid].value.shape}")

        grads: dict[int, np.ndarray] = {sid: np.ones_like(self.nodes[sid].value)}
        for nid in range(sid, -1, -1):
            g = grads.get(nid)
            if g is None:
                continue
            node = self.nodes[nid]
            if not node.parents:
                continue
            parent_grads = BACKWARD[node.kind](self, node, g)
            for pid, pg in zip(node.parents, parent_grads):
                if pg is None:
                    continue
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return grads


def backward(tape: Tape, seed: "int | Var") -> dict[int, np.ndarray]:
    return tape.backward(seed)


class Var:
    """Handle to one node on a tape, with arithmetic sugar."""

    __slots__ = ("tape", "id")
    __array_priority__ = 1000

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Var(id={self.id}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other) if isinstance(other, Var) else add_const(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Var) else add_const(self, -other)

    def __rsub__(self, other):
        return add_const(neg(self), other)

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Var) else mul_const(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return div(self, other)
        return mul_const(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def sum(self) -> "Var":
        return sum_all(self)


def _same_shape(a: Var, b: Var) -> None:
    if a.tape is not b.tape:
        raise TapeError("operands live on different tapes")
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")


def _unary(kind: OpKind, x: Var, value: np.ndarray, saved=None) -> Var:
    return Var(x.tape, x.tape.record(kind, (x.id,), value, saved))


# ---------------------------------------------------------------------------
# elementwise ops


def add(a: Var, b: Var) -> Var:
    _same_shape(a, b)
    return Var(a.tape, a.tape.record(OpKind.ADD, (a.id, b.id), a.value + b.value))


def sub(a: Var, b: Var) -> Var:
    _same_shape(a, b)
    return Var(a.tape, a.tape.record(OpKind.SUB, (a.id, b.id), a.value - b.value))


def mul(a: Var, b: Var) -> Var:
    _same_shape(a, b)
    return Var(a.tape, a.tape.record(OpKind.MUL, (a.id, b.id), a.value * b.value))


def div(a: Var, b: Var) -> Var:
    _same_shape(a, b)
    return Var(a.tape, a.tape.record(OpKind.DIV, (a.id, b.id), a.value / b.value))


def neg(x: Var) -> Var:
    return _unary(OpKind.NEG, x, -x.value)


def add_const(x: Var, c) -> Var:
    """``x + c`` where ``c`` is a constant scalar or array (no gradient)."""
    return _unary(OpKind.ADD_CONST, x, x.value + c)


def mul_const(x: Var, c) -> Var:
    """``x * c`` where ``c`` is a constant scalar or array (no gradient)."""
    c = np.asarray(c, dtype=DTYPE)
    return _unary(OpKind.MUL_CONST, x, x.value * c, c)


def abs_(x: Var) -> Var:
    return _unary(OpKind.ABS, x, np.abs(x.value))


def relu(x: Var) -> Var:
    return _unary(OpKind.RELU, x, np.maximum(x.value, 0.0))


def softplus(x: Var) -> Var:
    v = x.value
    return _unary(OpKind.SOFTPLUS, x, np.logaddexp(0.0, v))


def sqrt(x: Var) -> Var:
    return _unary(OpKind.SQRT, x, np.sqrt(x.value))


def maximum_const(x: Var, floor: float) -> Var:
    """Elementwise ``max(x, floor)``; the gradient is passed where ``x > floor``."""
    return _unary(OpKind.MAX_CONST, x, np.maximum(x.value, floor), floor)


def sum_all(x: Var) -> Var:
    return _unary(OpKind.SUM, x, np.array(x.value.sum(), dtype=DTYPE).reshape(SCALAR_SHAPE))


def concat(xs: Sequence[Var]) -> Var:
    """Concatenate (C, H, W) tensors along the channel axis."""
    tape = xs[0].tape
    sizes = [x.shape[0] for x in xs]
    value = np.concatenate([x.value for x in xs], axis=0)
    return Var(tape, tape.record(OpKind.CONCAT, [x.id for x in xs], value, sizes))


@register_backward(OpKind.ADD)
def _add_bw(tape, node, g):
    return g, g


@register_backward(OpKind.SUB)
def _sub_bw(tape, node, g):
    return g, -g


@register_backward(OpKind.MUL)
def _mul_bw(tape, node, g):
    a, b = (tape.value(p) for p in node.parents)
    return g * b, g * a


@register_backward(OpKind.DIV)
def _div_bw(tape, node, g):
    a, b = (tape.value(p) for p in node.parents)
    ga = g / b
    return ga, -ga * node.value


@register_backward(OpKind.NEG)
def _neg_bw(tape, node, g):
    return (-g,)


@register_backward(OpKind.ADD_CONST)
def _add_const_bw(tape, node, g):
    return (g,)


@register_backward(OpKind.MUL_CONST)
def _mul_const_bw(tape, node, g):
    return (g * node.saved,)


@register_backward(OpKind.ABS)
def _abs_bw(tape, node, g):
    return (g * np.sign(tape.value(node.parents[0])),)


@register_backward(OpKind.RELU)
def _relu_bw(tape, node, g):
    # subgradient at 0 is 0
    return (g * (tape.value(node.parents[0]) > 0.0),)


@register_backward(OpKind.SOFTPLUS)
def _softplus_bw(tape, node, g):
    x = tape.value(node.parents[0])
    return (g * (0.5 * (1.0 + np.tanh(0.5 * x))),)


@register_backward(OpKind.SQRT)
def _sqrt_bw(tape, node, g):
    return (g * 0.5 / node.value,)


@register_backward(OpKind.MAX_CONST)
def _max_const_bw(tape, node, g):
    return (g * (tape.value(node.parents[0]) > node.saved),)


@register_backward(OpKind.SUM)
def _sum_bw(tape, node, g):
    x = tape.value(node.parents[0])
    return (np.full_like(x, g.reshape(())),)


@register_backward(OpKind.CONCAT)
def _concat_bw(tape, node, g):
    return tuple(np.split(g, np.cumsum(node.saved)[:-1], axis=0))


# ---------------------------------------------------------------------------
# finite-difference checking


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    checked: int
    worst: tuple[int, int] | None = None  # (input index, flat element index)

    def __bool__(self) -> bool:
        return self.passed


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a, dtype=DTYPE)
    n = np.asarray(n, dtype=DTYPE)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(fn: Callable[..., Var], inputs: Sequence[np.ndarray], h: float = 1e-5,
               tol: float = 1e-4, max_checks: int | None = None,
               rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare tape gradients of ``fn`` with central differences.

    ``fn`` receives one :class:`Var` per input (all on a fresh tape) and
    returns a scalar Var. With ``max_checks`` set, a random subset of that
    many elements per input is perturbed instead of every element.
    """
    inputs = [np.array(x, dtype=DTYPE) for x in inputs]

    def evaluate(arrs):
        tape = Tape()
        out = fn(*[tape.leaf(a) for a in arrs])
        return tape, out

    tape, out = evaluate(inputs)
    grads = tape.backward(out)
    analytic = [grads.get(i, np.zeros_like(x)) for i, x in enumerate(inputs)]

    def f_at(k, idx, delta):
        arrs = [a.copy() for a in inputs]
        arrs[k].flat[idx] += delta
        return float(evaluate(arrs)[1].value.reshape(()))

    rng = rng or np.random.default_rng(0)
    worst_err, worst, checked = 0.0, None, 0
    for k, x in enumerate(inputs):
        idxs = np.arange(x.size)
        if max_checks is not None and x.size > max_checks:
            idxs = np.sort(rng.choice(x.size, size=max_checks, replace=False))
        for idx in idxs:
            num = (f_at(k, idx, h) - f_at(k, idx, -h)) / (2.0 * h)
            err = float(relative_error(analytic[k].flat[idx], num))
            checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (k, int(idx))
    return GradCheckReport(worst_err < tol, worst_err, checked, worst)
