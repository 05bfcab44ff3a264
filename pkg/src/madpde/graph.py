"""Differentiable computation graph with second-order input jets.

The engine records every operation on a flat tape.  Node values are f64
scalars or f64 arrays; an array node applies the scalar operation
elementwise, which keeps per-sample semantics while letting a training
batch ride through numpy in one shot.  Broadcasting is limited to
scalar-with-array; general shape broadcasting is deliberately absent.

Two derivative mechanisms share the tape:

* ``Jet2`` carries, per spatial coordinate, the first and the diagonal
  second derivative of a quantity with respect to the network input.
  Jet lanes are ordinary tape nodes, so anything computed from them
  (e.g. a residual loss) remains differentiable with respect to the
  parameter leaves.
* ``backward`` runs reverse accumulation from a scalar root and returns
  the gradient for every reachable parameter leaf.

Mixed second partials and third-order terms are out of scope; the
supported PDE residuals only need the diagonal.
"""

from __future__ import annotations

import numpy as np
from dataclasses import dataclass
from typing import Callable, Sequence

Array = np.ndarray

_F64 = np.float64


class GraphError(Exception):
    """Malformed graph construction (shape or operand misuse)."""


class NonFiniteGradientError(GraphError):
    """A non-finite adjoint appeared during reverse accumulation."""

    def __init__(self, node_id: int, op: str):
        super().__init__(
            f"non-finite gradient first appeared at node {node_id} (op '{op}')"
        )
        self.node_id = node_id
        self.op = op


def _as_value(x) -> Array:
    a = np.asarray(x, dtype=_F64)
    return a


class Node:
    """Handle to one tape entry."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> Array:
        return self.tape._values[self.id]

    @property
    def op(self) -> str:
        return self.tape._ops[self.id]

    @property
    def inputs(self) -> tuple:
        return self.tape._inputs[self.id]

    @property
    def shape(self):
        return self.tape._values[self.id].shape

    def __add__(self, other: "Node") -> "Node":
        return self.tape.add(self, other)

    def __mul__(self, other: "Node") -> "Node":
        return self.tape.mul(self, other)

    def __neg__(self) -> "Node":
        return self.tape.neg(self)

    def __pow__(self, k: int) -> "Node":
        return self.tape.pow_int(self, k)

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.shape})"


def _shapes_combine(a: Array, b: Array, op: str):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise GraphError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


class Tape:
    """Append-only operation record; construction order is evaluation order."""

    def __init__(self):
        self._ops: list[str] = []
        self._inputs: list[tuple] = []
        self._values: list[Array] = []
        self._meta: list = []
        self._requires: list[bool] = []
        # cached as ids, not Nodes: a Node points back at the tape, and
        # storing one here would make every tape a cycle for the gc
        self._zero_id: int | None = None
        self._one_id: int | None = None

    def __len__(self):
        return len(self._ops)

    def _emit(self, op: str, value: Array, inputs: tuple, meta=None) -> Node:
        requires = any(self._requires[i] for i in inputs)
        self._ops.append(op)
        self._inputs.append(inputs)
        self._values.append(value)
        self._meta.append(meta)
        self._requires.append(requires)
        return Node(self, len(self._ops) - 1)

    # -- leaves ---------------------------------------------------------

    def constant(self, value) -> Node:
        v = _as_value(value)
        if not np.all(np.isfinite(v)):
            raise GraphError("constant: non-finite input rejected")
        self._ops.append("constant")
        self._inputs.append(())
        self._values.append(v)
        self._meta.append(None)
        self._requires.append(False)
        return Node(self, len(self._ops) - 1)

    def param(self, value) -> Node:
        """Parameter leaf; backward reports its gradient."""
        v = _as_value(value)
        if not np.all(np.isfinite(v)):
            raise GraphError("param: non-finite input rejected")
        self._ops.append("param")
        self._inputs.append(())
        self._values.append(v)
        self._meta.append(None)
        self._requires.append(True)
        return Node(self, len(self._ops) - 1)

    @property
    def zero(self) -> Node:
        if self._zero_id is None:
            self._zero_id = self.constant(0.0).id
        return Node(self, self._zero_id)

    @property
    def one(self) -> Node:
        if self._one_id is None:
            self._one_id = self.constant(1.0).id
        return Node(self, self._one_id)

    # -- elementwise ----------------------------------------------------

    def add(self, a: Node, b: Node) -> Node:
        _shapes_combine(a.value, b.value, "add")
        return self._emit("add", a.value + b.value, (a.id, b.id))

    def mul(self, a: Node, b: Node) -> Node:
        _shapes_combine(a.value, b.value, "mul")
        return self._emit("mul", a.value * b.value, (a.id, b.id))

    def neg(self, a: Node) -> Node:
        return self._emit("neg", -a.value, (a.id,))

    def sin(self, a: Node) -> Node:
        return self._emit("sin", np.sin(a.value), (a.id,))

    def cos(self, a: Node) -> Node:
        return self._emit("cos", np.cos(a.value), (a.id,))

    def exp(self, a: Node) -> Node:
        return self._emit("exp", np.exp(a.value), (a.id,))

    def pow_int(self, a: Node, k: int) -> Node:
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise GraphError("pow: exponent must be an integer >= 0")
        return self._emit("pow", a.value ** int(k), (a.id,), meta=int(k))

    def reciprocal(self, a: Node) -> Node:
        return self._emit("reciprocal", 1.0 / a.value, (a.id,))

    def abspow(self, a: Node, p: float) -> Node:
        """|x|**p for p >= 1; loss-assembly helper (first-order VJP only)."""
        if p < 1.0:
            raise GraphError("abspow: p must be >= 1")
        return self._emit("abspow", np.abs(a.value) ** p, (a.id,), meta=float(p))

    # -- reductions and structure --------------------------------------

    def sum(self, a: Node) -> Node:
        return self._emit("sum", np.sum(a.value), (a.id,))

    def affine(self, x: Node, w: Node, b: Node | None = None,
               rows: tuple[int, int] | None = None) -> Node:
        """x @ w[r0:r1] (+ b).  ``rows`` selects a contiguous row block
        of ``w`` so one weight matrix can serve split feature groups."""
        wv = w.value
        if wv.ndim != 2:
            raise GraphError("affine: weight must be 2-D")
        r0, r1 = rows if rows is not None else (0, wv.shape[0])
        if not (0 <= r0 < r1 <= wv.shape[0]):
            raise GraphError(f"affine: row range {r0}:{r1} out of bounds")
        xv = x.value
        if xv.ndim != 2 or xv.shape[1] != r1 - r0:
            raise GraphError(
                f"affine: input shape {xv.shape} incompatible with rows {r0}:{r1}"
            )
        out = xv @ wv[r0:r1]
        ids = (x.id, w.id)
        if b is not None:
            bv = b.value
            if bv.shape != (wv.shape[1],):
                raise GraphError("affine: bias shape mismatch")
            out = out + bv
            ids = (x.id, w.id, b.id)
        return self._emit("affine", out, ids, meta=(r0, r1))

    def block_repeat(self, z: Node, reps: int) -> Node:
        """Repeat each row ``reps`` times: (n,) -> (reps, n) or
        (T, n) -> (T*reps, n).  Adjoint sums each block back."""
        zv = z.value
        if reps < 1:
            raise GraphError("block_repeat: reps must be >= 1")
        if zv.ndim == 1:
            out = np.repeat(zv[None, :], reps, axis=0)
        elif zv.ndim == 2:
            out = np.repeat(zv, reps, axis=0)
        else:
            raise GraphError("block_repeat: expects 1-D or 2-D input")
        return self._emit("block_repeat", out, (z.id,), meta=reps)

    # -- reverse accumulation ------------------------------------------

    def _backward_pass(self, root_id: int, check: bool) -> dict[int, Array]:
        adjoint: list[Array | None] = [None] * (root_id + 1)
        adjoint[root_id] = np.asarray(1.0, dtype=_F64)
        grads: dict[int, Array] = {}
        ops, inputs, values, meta = self._ops, self._inputs, self._values, self._meta
        requires = self._requires
        for nid in range(root_id, -1, -1):
            g = adjoint[nid]
            if g is None:
                continue
            if check and not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(nid, ops[nid])
            op = ops[nid]
            if op == "param":
                grads[nid] = g if np.ndim(g) == values[nid].ndim else np.broadcast_to(g, values[nid].shape).copy()
                continue
            if op == "constant":
                continue
            ins = inputs[nid]
            if op == "add":
                a, b = ins
                if requires[a]:
                    _accumulate(adjoint, a, _unbroadcast(g, values[a]))
                if requires[b]:
                    _accumulate(adjoint, b, _unbroadcast(g, values[b]))
            elif op == "mul":
                a, b = ins
                if requires[a]:
                    _accumulate(adjoint, a, _unbroadcast(g * values[b], values[a]))
                if requires[b]:
                    _accumulate(adjoint, b, _unbroadcast(g * values[a], values[b]))
            elif op == "neg":
                (a,) = ins
                if requires[a]:
                    _accumulate(adjoint, a, -g)
            elif op == "sin":
                (a,) = ins
                if requires[a]:
                    _accumulate(adjoint, a, g * np.cos(values[a]))
            elif op == "cos":
                (a,) = ins
                if requires[a]:
                    _accumulate(adjoint, a, -g * np.sin(values[a]))
            elif op == "exp":
                (a,) = ins
                if requires[a]:
                    _accumulate(adjoint, a, g * values[nid])
            elif op == "pow":
                (a,) = ins
                k = meta[nid]
                if requires[a]:
                    if k == 0:
                        contrib = np.zeros_like(values[a])
                    else:
                        contrib = g * (k * values[a] ** (k - 1))
                    _accumulate(adjoint, a, contrib)
            elif op == "reciprocal":
                (a,) = ins
                if requires[a]:
                    y = values[nid]
                    _accumulate(adjoint, a, -g * y * y)
            elif op == "abspow":
                (a,) = ins
                p = meta[nid]
                if requires[a]:
                    x = values[a]
                    if p == 1.0:
                        d = np.sign(x)
                    else:
                        d = p * np.sign(x) * np.abs(x) ** (p - 1.0)
                    _accumulate(adjoint, a, g * d)
            elif op == "sum":
                (a,) = ins
                if requires[a]:
                    _accumulate(adjoint, a, np.broadcast_to(g, values[a].shape))
            elif op == "affine":
                r0, r1 = meta[nid]
                x = ins[0]
                w = ins[1]
                wv = values[w]
                if requires[x]:
                    _accumulate(adjoint, x, g @ wv[r0:r1].T)
                if requires[w]:
                    gw = np.zeros_like(wv)
                    gw[r0:r1] = values[x].T @ g
                    _accumulate(adjoint, w, gw)
                if len(ins) == 3 and requires[ins[2]]:
                    _accumulate(adjoint, ins[2], g.sum(axis=0))
            elif op == "block_repeat":
                (a,) = ins
                reps = meta[nid]
                if requires[a]:
                    av = values[a]
                    if av.ndim == 1:
                        _accumulate(adjoint, a, g.sum(axis=0))
                    else:
                        t, n = av.shape
                        _accumulate(adjoint, a, g.reshape(t, reps, n).sum(axis=1))
            else:  # pragma: no cover - unreachable unless an op is added
                raise GraphError(f"backward: unsupported op {op!r}")
            adjoint[nid] = None
        return grads


def _accumulate(adjoint: list, nid: int, contrib: Array):
    cur = adjoint[nid]
    adjoint[nid] = contrib if cur is None else cur + contrib


def _unbroadcast(g: Array, target: Array) -> Array:
    if np.ndim(g) and target.ndim == 0:
        return np.sum(g)
    return g


class GradientMap:
    """Gradient per parameter leaf, keyed by node id."""

    def __init__(self, grads: dict[int, Array]):
        self._grads = grads

    def wrt(self, leaf: Node) -> Array:
        return self._grads[leaf.id]

    def __contains__(self, leaf: Node) -> bool:
        return leaf.id in self._grads

    def __len__(self):
        return len(self._grads)

    def ids(self):
        return self._grads.keys()


def backward(root: Node) -> GradientMap:
    """Reverse accumulation from a scalar root.

    Returns the derivative of ``root`` with respect to every parameter
    leaf that can reach it.  A non-finite gradient triggers a second,
    instrumented pass that names the first offending node.
    """
    if root.value.ndim != 0:
        raise GraphError("backward: root must be scalar")
    tape = root.tape
    grads = tape._backward_pass(root.id, check=False)
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            tape._backward_pass(root.id, check=True)
            raise GraphError("non-finite gradient (location pass did not trigger)")
    return GradientMap(grads)


# ---------------------------------------------------------------------------
# Second-order jets


@dataclass(frozen=True)
class Jet2:
    """Value plus first and diagonal second input derivatives.

    ``d1[k]`` and ``d2[k]`` are tape nodes (or None for a lane that the
    caller declared unused; None stays None through arithmetic).
    """

    val: Node
    d1: tuple
    d2: tuple

    @property
    def dim(self) -> int:
        return len(self.d1)


def lift_constant(tape: Tape, c, dim: int) -> Jet2:
    """Constant with respect to every input coordinate."""
    node = tape.constant(c)
    z = tape.zero
    return Jet2(node, (z,) * dim, (z,) * dim)


def lift_coordinate(tape: Tape, x, k: int, d: int) -> Jet2:
    """Coordinate ``k`` of a d-dimensional input; unit first derivative."""
    if not 0 <= k < d:
        raise GraphError(f"lift_coordinate: index {k} out of range for d={d}")
    node = tape.constant(x)
    d1 = tuple(tape.one if j == k else tape.zero for j in range(d))
    return Jet2(node, d1, (tape.zero,) * d)


def _is_zero(tape: Tape, node: Node | None) -> bool:
    return node is not None and node.id == tape._zero_id


def _jadd(tape: Tape, a: Node | None, b: Node | None) -> Node | None:
    if a is None or b is None:
        return None
    if _is_zero(tape, a):
        return b
    if _is_zero(tape, b):
        return a
    return tape.add(a, b)


def _jmul(tape: Tape, a: Node | None, b: Node | None) -> Node | None:
    if a is None or b is None:
        return None
    if _is_zero(tape, a) or _is_zero(tape, b):
        return tape.zero
    return tape.mul(a, b)


def jet_arith(a: Jet2, b: Jet2 | None, op: str) -> Jet2:
    """Order-2 chain and product rules over the supported primitives.

    Unary: val=f(a), d1=f'*a.d1, d2=f''*a.d1^2 + f'*a.d2.
    Binary add/mul use linearity and the product rule; division is
    mul-with-reciprocal at the call site.
    """
    tape = a.val.tape
    if op in ("add", "mul"):
        if b is None:
            raise GraphError(f"jet_arith: {op} needs two operands")
        if a.dim != b.dim:
            raise GraphError("jet_arith: dimension mismatch")
        if op == "add":
            return Jet2(
                tape.add(a.val, b.val),
                tuple(_jadd(tape, x, y) for x, y in zip(a.d1, b.d1)),
                tuple(_jadd(tape, x, y) for x, y in zip(a.d2, b.d2)),
            )
        val = tape.mul(a.val, b.val)
        d1 = tuple(
            _jadd(tape, _jmul(tape, a.d1[k], b.val), _jmul(tape, a.val, b.d1[k]))
            for k in range(a.dim)
        )
        d2 = []
        two = tape.constant(2.0)
        for k in range(a.dim):
            cross = _jmul(tape, a.d1[k], b.d1[k])
            if cross is not None and not _is_zero(tape, cross):
                cross = tape.mul(two, cross)
            term = _jadd(tape, _jmul(tape, a.d2[k], b.val), cross)
            term = _jadd(tape, term, _jmul(tape, a.val, b.d2[k]))
            d2.append(term)
        return Jet2(val, d1, tuple(d2))

    if b is not None:
        raise GraphError(f"jet_arith: {op} is unary")
    if op == "neg":
        return Jet2(
            tape.neg(a.val),
            tuple(None if x is None else (x if _is_zero(tape, x) else tape.neg(x)) for x in a.d1),
            tuple(None if x is None else (x if _is_zero(tape, x) else tape.neg(x)) for x in a.d2),
        )
    if op == "sin":
        val = tape.sin(a.val)
        fp = tape.cos(a.val)
        fpp = tape.neg(val)
    elif op == "cos":
        val = tape.cos(a.val)
        fp = tape.neg(tape.sin(a.val))
        fpp = tape.neg(val)
    elif op == "exp":
        val = tape.exp(a.val)
        fp = val
        fpp = val
    elif op == "pow":
        raise GraphError("jet_arith: use jet_pow for integer exponents")
    elif op == "reciprocal":
        val = tape.reciprocal(a.val)
        fp = tape.neg(tape.mul(val, val))
        fpp = tape.mul(tape.constant(2.0), tape.mul(val, tape.mul(val, val)))
    else:
        raise GraphError(f"jet_arith: unsupported op {op!r}")
    d1 = tuple(_jmul(tape, fp, x) for x in a.d1)
    d2 = []
    for k in range(a.dim):
        sq = _jmul(tape, a.d1[k], a.d1[k])
        d2.append(_jadd(tape, _jmul(tape, fpp, sq), _jmul(tape, fp, a.d2[k])))
    return Jet2(val, d1, tuple(d2))


def jet_pow(a: Jet2, k: int) -> Jet2:
    """Integer power as a jet; f' = k x^(k-1), f'' = k(k-1) x^(k-2)."""
    tape = a.val.tape
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise GraphError("jet_pow: exponent must be an integer >= 0")
    val = tape.pow_int(a.val, k)
    if k == 0:
        return Jet2(val, (tape.zero,) * a.dim, (tape.zero,) * a.dim)
    fp = tape.mul(tape.constant(float(k)), tape.pow_int(a.val, k - 1))
    if k == 1:
        fpp = tape.zero
    else:
        fpp = tape.mul(tape.constant(float(k * (k - 1))), tape.pow_int(a.val, k - 2))
    d1 = tuple(_jmul(tape, fp, x) for x in a.d1)
    d2 = tuple(
        _jadd(tape, _jmul(tape, fpp, _jmul(tape, a.d1[k2], a.d1[k2])),
              _jmul(tape, fp, a.d2[k2]))
        for k2 in range(a.dim)
    )
    return Jet2(val, d1, d2)


# ---------------------------------------------------------------------------
# Finite-difference oracle


@dataclass
class FdReport:
    per_coord: Array
    max_rel_err: float
    nonfinite: bool


def finite_diff_check(f: Callable[[Array], float], x0: Sequence[float], h: float,
                      analytic: Sequence[float], floor: float | None = None) -> FdReport:
    """Central differences of ``f`` per coordinate against ``analytic``.

    Relative error uses max(|analytic|, |fd|, floor) as denominator; the
    floor defaults to 1e-6 * max(1, largest analytic magnitude) so that
    coordinates whose true derivative is (near) zero are judged on an
    absolute scale instead of blowing up.
    """
    if h <= 0:
        raise GraphError("finite_diff_check: h must be positive")
    x0 = np.asarray(x0, dtype=_F64)
    analytic = np.asarray(analytic, dtype=_F64)
    if floor is None:
        amax = float(np.max(np.abs(analytic))) if analytic.size else 0.0
        floor = 1e-6 * max(1.0, amax)
    fd = np.empty_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        fd.flat[i] = (f(xp) - f(xm)) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    per = np.abs(fd - analytic) / denom
    nonfinite = not bool(np.all(np.isfinite(per)))
    max_err = float(np.max(per)) if per.size else 0.0
    return FdReport(per_coord=per, max_rel_err=max_err, nonfinite=nonfinite)
