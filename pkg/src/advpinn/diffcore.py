"""Second-order input jets and a reverse-mode tape whose node values are jets.

A :class:`Jet` stores, for a batch of ``N`` points and ``w`` channels, the value
together with first and pure second partial derivatives with respect to each of
``ndim`` input coordinates.  All components live in one stacked array of shape
``(C, N, w)`` with ``C = 1 + order * ndim``::

    data[0]                 value
    data[1 : 1+ndim]        d/dx_k        (order >= 1)
    data[1+ndim : 1+2ndim]  d^2/dx_k^2    (order == 2)

Operations accept jets, plain arrays (treated as constants) or tape
:class:`Node` objects.  When any operand is a node the result is recorded on
that node's tape, so a single forward implementation serves both eager
evaluation and differentiation with respect to parameters.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np


class NumericalOverflowError(FloatingPointError):
    """Raised when a forward pass produces a non-finite value."""

    def __init__(self, where: str):
        super().__init__(f"non-finite value produced in {where}")
        self.where = where


class StructuralError(ValueError):
    """Inconsistent shapes, layouts or tapes."""


class Jet:
    __slots__ = ("data", "ndim", "order")

    def __init__(self, data: np.ndarray, ndim: int, order: int):
        self.data = data
        self.ndim = ndim
        self.order = order

    @classmethod
    def constant(cls, value, ndim: int = 0, order: int = 0) -> "Jet":
        v = np.asarray(value, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        data = np.zeros((1 + order * ndim,) + v.shape)
        data[0] = v
        return cls(data, ndim if order else 0, order)

    @classmethod
    def seed(cls, x: np.ndarray, order: int = 2) -> "Jet":
        """Jet of the coordinate functions themselves: x_k with d x_k/d x_j = delta_kj."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        n, d = x.shape
        data = np.zeros((1 + order * d, n, d))
        data[0] = x
        if order >= 1:
            for k in range(d):
                data[1 + k, :, k] = 1.0
        return cls(data, d if order else 0, order)

    @property
    def value(self) -> np.ndarray:
        return self.data[0]

    @property
    def d1(self) -> np.ndarray:
        if self.order < 1:
            return np.zeros((self.ndim,) + self.data.shape[1:])
        return self.data[1:1 + self.ndim]

    @property
    def d2(self) -> np.ndarray:
        if self.order < 2:
            return np.zeros((self.ndim,) + self.data.shape[1:])
        return self.data[1 + self.ndim:]

    @property
    def shape(self):
        return self.data.shape[1:]

    def like(self, data: np.ndarray) -> "Jet":
        return Jet(data, self.ndim, self.order)

    def __repr__(self):
        return f"Jet(ndim={self.ndim}, order={self.order}, shape={self.shape})"

    # operator sugar; works for both eager jets and nodes through the module functions
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, n): return powi(self, n)


@dataclass(frozen=True)
class DualJet:
    """Value and input derivatives of a scalar function at a single point."""

    value: float
    d1: np.ndarray
    d2: np.ndarray


# ---------------------------------------------------------------------------
# tape

class Node:
    __slots__ = ("tape", "index", "value", "parents", "backward", "kind", "slot", "rowwise")

    def __init__(self, tape, value, parents=(), backward=None, kind="op", slot=None, rowwise=True):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward = backward
        self.kind = kind
        self.slot = slot
        self.rowwise = rowwise
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def jet(self) -> Jet:
        return self.value

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return neg(self)
    def __pow__(self, n): return powi(self, n)

    def __repr__(self):
        return f"Node(#{self.index}, {self.kind})"


class Tape:
    """Single-writer record of operations.

    Parameter vectors are registered with :meth:`watch`; each registration
    gets a slot range so gradients can be scattered back into a flat vector
    laid out like the watched vector.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.slots: dict[int, tuple[int, tuple]] = {}

    def watch(self, params) -> list[tuple[Node, Node]]:
        """Register a ParamVector; returns per-layer (W, b) leaf nodes."""
        key = id(params)
        self.slots[key] = (len(self.nodes), tuple(params.layout))
        leaves = []
        for (off, fan_in, fan_out) in params.layout:
            W = params.values[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            b = params.values[off + fan_in * fan_out: off + (fan_in + 1) * fan_out]
            wn = Node(self, W, kind="param", slot=(key, off))
            bn = Node(self, b, kind="param", slot=(key, off + fan_in * fan_out))
            leaves.append((wn, bn))
        return leaves

    def watch_array(self, params_key, values: np.ndarray) -> Node:
        """Register a flat array as one leaf holding an order-0 column jet (one row per entry).

        Gradients scatter back with :func:`_scatter` keyed on ``params_key``,
        which must expose the flat vector as ``.values``.
        """
        key = id(params_key)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        self.slots[key] = (len(self.nodes), (("flat", values.size),))
        return Node(self, Jet.constant(values), kind="param", slot=(key, 0))

    def variable(self, value) -> Node:
        """Non-parameter leaf whose adjoint can be read back with :meth:`grad_wrt`."""
        if not isinstance(value, Jet):
            value = Jet.constant(value)
        return Node(self, value, kind="var")

    # -- reverse sweep -------------------------------------------------
    def _sweep(self, out: Node, seed: np.ndarray, per_row: bool):
        if out.tape is not self:
            raise StructuralError("output was not recorded on this tape")
        adj: list = [None] * (out.index + 1)
        adj[out.index] = seed
        leaves = {}
        for i in range(out.index, -1, -1):
            g = adj[i]
            if g is None:
                continue
            adj[i] = None
            node = self.nodes[i]
            if node.backward is None:
                leaves[i] = g
                continue
            if per_row and not node.rowwise:
                raise StructuralError(f"operation {node.kind} mixes rows")
            grads = node.backward(g, per_row)
            for p, gp in zip(node.parents, grads):
                if gp is None or not isinstance(p, Node):
                    continue
                j = p.index
                adj[j] = gp if adj[j] is None else adj[j] + gp
        return leaves

    def backward(self, out: Node, seed=None, per_row: bool = False) -> dict:
        if seed is None:
            if out.value.data.size != 1:
                raise StructuralError("seed required for non-scalar output")
            seed = np.ones_like(out.value.data)
        return self._sweep(out, seed, per_row)

    def grad_wrt(self, out: Node, var: Node) -> Jet:
        leaves = self.backward(out)
        g = leaves.get(var.index)
        if g is None:
            g = np.zeros_like(var.value.data)
        return var.value.like(g)


def _scatter(tape: Tape, leaves: dict, params, per_row_n: int | None = None) -> np.ndarray:
    key = id(params)
    if key not in tape.slots:
        raise StructuralError("parameters were not watched on this tape")
    size = params.values.size
    out = np.zeros(size) if per_row_n is None else np.zeros((per_row_n, size))
    for i, g in leaves.items():
        node = tape.nodes[i]
        if node.kind != "param" or node.slot[0] != key:
            continue
        off = node.slot[1]
        n = node.value.data.size if isinstance(node.value, Jet) else node.value.size
        if per_row_n is None:
            out[off:off + n] += g.reshape(-1)
        else:
            out[:, off:off + n] += g.reshape(per_row_n, -1)
    return out


def grad_params(loss: Node, params) -> np.ndarray:
    """Gradient of a recorded scalar with respect to a watched ParamVector."""
    tape = loss.tape
    return _scatter(tape, tape.backward(loss), params)


def jacobian_params(outputs, params) -> np.ndarray:
    """Jacobian (N x P) of recorded residuals with respect to ``params``.

    ``outputs`` is either one node holding N rows of width 1 (a batched
    residual) or a sequence of scalar nodes, possibly on different tapes.
    """
    if isinstance(outputs, Node):
        val = outputs.value
        if val.order != 0 or val.data.shape[2] != 1:
            raise StructuralError("jacobian_params expects an order-0 column of residuals")
        n = val.data.shape[1]
        tape = outputs.tape
        try:
            leaves = tape.backward(outputs, np.ones_like(val.data), per_row=True)
            return _scatter(tape, leaves, params, per_row_n=n)
        except StructuralError:
            rows = [index_row(outputs, i) for i in range(n)]
            return np.stack([grad_params(r, params) for r in rows])
    layout = None
    rows = []
    for o in outputs:
        slot = o.tape.slots.get(id(params))
        if slot is None:
            raise StructuralError("output tape does not reference these parameters")
        if layout is None:
            layout = slot[1]
        elif slot[1] != layout:
            raise StructuralError("inconsistent parameter slot maps across tapes")
        rows.append(grad_params(o, params))
    return np.stack(rows) if rows else np.zeros((0, params.values.size))


# ---------------------------------------------------------------------------
# helpers

def _val(x):
    """Underlying Jet (or array for matrix-valued nodes)."""
    return x.value if isinstance(x, Node) else x


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def _as_jet(x, like: Jet) -> Jet:
    if isinstance(x, Jet):
        return x
    v = np.asarray(x, dtype=np.float64)
    data = np.zeros((like.data.shape[0],) + np.broadcast_shapes(v.shape, like.data.shape[1:]))
    data[0] = v
    return like.like(data)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(ax, keepdims=True)
    return g


def _record(value, parents, backward, kind, rowwise=True):
    tape = _tape_of(*parents)
    if tape is None:
        return value
    return Node(tape, value, parents, backward, kind, rowwise=rowwise)


# ---------------------------------------------------------------------------
# elementwise unary primitives: f and its first three derivatives

def _unary_forward(x: Jet, f0, f1, f2) -> Jet:
    d = x.data
    out = np.empty_like(d)
    out[0] = f0
    if x.order >= 1:
        D = x.ndim
        v1 = d[1:1 + D]
        out[1:1 + D] = f1 * v1
        if x.order == 2:
            out[1 + D:] = f2 * v1 * v1 + f1 * d[1 + D:]
    return x.like(out)


def _unary_backward(x: Jet, g: np.ndarray, f1, f2, f3) -> np.ndarray:
    d = x.data
    gx = np.empty_like(g)
    if x.order == 0:
        gx[0] = g[0] * f1
        return gx
    D = x.ndim
    v1 = d[1:1 + D]
    g1 = g[1:1 + D]
    if x.order == 1:
        gx[0] = g[0] * f1 + f2 * (g1 * v1).sum(0)
        gx[1:] = g1 * f1
        return gx
    v2 = d[1 + D:]
    g2 = g[1 + D:]
    gx[0] = g[0] * f1 + f2 * (g1 * v1).sum(0) + (g2 * (f3 * v1 * v1 + f2 * v2)).sum(0)
    gx[1:1 + D] = g1 * f1 + 2.0 * f2 * g2 * v1
    gx[1 + D:] = g2 * f1
    return gx


def _make_unary(name: str, derivs: Callable[[np.ndarray], tuple]):
    def op(x):
        xj = _val(x)
        if not isinstance(xj, Jet):
            xj = Jet.constant(xj)
        f0, f1, f2, f3 = derivs(xj.data[0], xj.order)
        out = _unary_forward(xj, f0, f1, f2)

        def back(g, per_row):
            return (_unary_backward(xj, g, f1, f2, f3),)

        return _record(out, (x,), back, name)

    op.__name__ = name
    return op


def _tanh_d(v, order=2):
    t = np.tanh(v)
    s = 1.0 - t * t
    if order == 0:
        return t, s, None, None
    return t, s, -2.0 * t * s, s * (6.0 * t * t - 2.0)


def _exp_d(v, order=2):
    e = np.exp(v)
    return e, e, e, e


def _log_d(v, order=2):
    inv = 1.0 / v
    return np.log(v), inv, -inv * inv, 2.0 * inv * inv * inv


def _sigmoid_d(v, order=2):
    s = 0.5 * (1.0 + np.tanh(0.5 * v))
    q = s * (1.0 - s)
    if order == 0:
        return s, q, None, None
    return s, q, q * (1.0 - 2.0 * s), q * (1.0 - 6.0 * s + 6.0 * s * s)


def _sin_d(v, order=2):
    s, c = np.sin(v), np.cos(v)
    return s, c, -s, -c


def _cos_d(v, order=2):
    s, c = np.sin(v), np.cos(v)
    return c, -s, -c, s


def _cosh_d(v, order=2):
    ch, sh = np.cosh(v), np.sinh(v)
    return ch, sh, ch, sh


def _softplus_d(v, order=2):
    s = 0.5 * (1.0 + np.tanh(0.5 * v))
    q = s * (1.0 - s)
    return np.logaddexp(0.0, v), s, q, q * (1.0 - 2.0 * s)


def _abs_d(v, order=2):
    z = np.zeros_like(v)
    return np.abs(v), np.sign(v), z, z


tanh = _make_unary("tanh", _tanh_d)
exp = _make_unary("exp", _exp_d)
log = _make_unary("log", _log_d)
sigmoid = _make_unary("sigmoid", _sigmoid_d)
sin = _make_unary("sin", _sin_d)
cos = _make_unary("cos", _cos_d)
cosh = _make_unary("cosh", _cosh_d)
softplus = _make_unary("softplus", _softplus_d)
absolute = _make_unary("abs", _abs_d)


def powi(x, n: int):
    if int(n) != n:
        raise ValueError("powi requires an integer exponent")
    n = int(n)

    def derivs(v, order=2):
        c1 = n * v ** (n - 1) if n != 0 else np.zeros_like(v)
        c2 = n * (n - 1) * v ** (n - 2) if n not in (0, 1) else np.zeros_like(v)
        c3 = n * (n - 1) * (n - 2) * v ** (n - 3) if n not in (0, 1, 2) else np.zeros_like(v)
        return v ** n, c1, c2, c3

    return _make_unary(f"pow{n}", derivs)(x)


# ---------------------------------------------------------------------------
# binary primitives

def add(a, b):
    aj, bj = _val(a), _val(b)
    like = aj if isinstance(aj, Jet) else bj
    aj, bj = _as_jet(aj, like), _as_jet(bj, like)
    out = like.like(aj.data + bj.data)
    sa, sb = aj.data.shape, bj.data.shape

    def back(g, per_row):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record(out, (a, b), back, "add")


def neg(a):
    aj = _val(a)
    out = aj.like(-aj.data)
    return _record(out, (a,), lambda g, pr: (-g,), "neg")


def sub(a, b):
    aj, bj = _val(a), _val(b)
    like = aj if isinstance(aj, Jet) else bj
    aj, bj = _as_jet(aj, like), _as_jet(bj, like)
    out = like.like(aj.data - bj.data)
    sa, sb = aj.data.shape, bj.data.shape

    def back(g, per_row):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _record(out, (a, b), back, "sub")


def mul(a, b):
    aj, bj = _val(a), _val(b)
    like = aj if isinstance(aj, Jet) else bj
    if not isinstance(aj, Jet) and np.ndim(aj) == 0:
        return scale(b, float(aj))
    if not isinstance(bj, Jet) and np.ndim(bj) == 0:
        return scale(a, float(bj))
    aj, bj = _as_jet(aj, like), _as_jet(bj, like)
    A, B = aj.data, bj.data
    order, D = like.order, like.ndim
    out = np.empty(np.broadcast_shapes(A.shape, B.shape))
    out[0] = A[0] * B[0]
    if order >= 1:
        a1, b1 = A[1:1 + D], B[1:1 + D]
        out[1:1 + D] = a1 * B[0] + A[0] * b1
        if order == 2:
            out[1 + D:] = A[1 + D:] * B[0] + 2.0 * a1 * b1 + A[0] * B[1 + D:]

    def back(g, per_row):
        ga = np.empty(out.shape)
        gb = np.empty(out.shape)
        if order == 0:
            ga[0] = g[0] * B[0]
            gb[0] = g[0] * A[0]
        else:
            g1 = g[1:1 + D]
            a1, b1 = A[1:1 + D], B[1:1 + D]
            ga0 = g[0] * B[0] + (g1 * b1).sum(0)
            gb0 = g[0] * A[0] + (g1 * a1).sum(0)
            if order == 2:
                g2 = g[1 + D:]
                ga0 = ga0 + (g2 * B[1 + D:]).sum(0)
                gb0 = gb0 + (g2 * A[1 + D:]).sum(0)
                ga[1:1 + D] = g1 * B[0] + 2.0 * g2 * b1
                gb[1:1 + D] = g1 * A[0] + 2.0 * g2 * a1
                ga[1 + D:] = g2 * B[0]
                gb[1 + D:] = g2 * A[0]
            else:
                ga[1:] = g1 * B[0]
                gb[1:] = g1 * A[0]
            ga[0] = ga0
            gb[0] = gb0
        return _unbroadcast(ga, A.shape), _unbroadcast(gb, B.shape)

    return _record(like.like(out), (a, b), back, "mul")


def scale(a, c: float):
    aj = _val(a)
    return _record(aj.like(aj.data * c), (a,), lambda g, pr: (g * c,), "scale")


def div(a, b):
    return mul(a, powi(b, -1))


# ---------------------------------------------------------------------------
# structural operations

def linear(x, W, b=None):
    """Affine map ``x @ W + b`` applied to every jet component (bias on the value only)."""
    xj = _val(x)
    Wv = _val(W)
    bv = _val(b) if b is not None else None
    X = xj.data
    Y = X @ Wv
    if bv is not None:
        Y[0] += bv
    w_leaf = isinstance(W, Node) and W.kind == "param"

    def back(g, per_row):
        gx = g @ Wv.T if isinstance(x, Node) else None
        gW = gb = None
        if isinstance(W, Node):
            if per_row:
                if not w_leaf:
                    raise StructuralError("per-row gradients need a leaf weight")
                gW = X[0][:, :, None] * g[0][:, None, :]
                for c in range(1, X.shape[0]):
                    gW += X[c][:, :, None] * g[c][:, None, :]
            else:
                # same component order as the per-row branch, so a one-hot seed
                # reproduces a Jacobian row bit for bit
                gW = X[0].T @ g[0]
                for c in range(1, X.shape[0]):
                    gW += X[c].T @ g[c]
        if isinstance(b, Node):
            gb = g[0] if per_row else g[0].sum(0)
        return gx, gW, gb

    return _record(xj.like(Y), (x, W, b), back, "linear")


def sn_weight(W, u: np.ndarray, v: np.ndarray):
    """Spectrally normalised weight W / (u^T W v) with fixed singular-vector estimates."""
    Wv = _val(W)
    sigma = float(u @ Wv @ v)
    if not np.isfinite(sigma) or sigma == 0.0:
        sigma = 1.0
    out = Wv / sigma
    uv = np.outer(u, v)

    def back(g, per_row):
        return (g / sigma - (np.sum(g * Wv) / sigma ** 2) * uv,)

    return _record(out, (W,), back, "sn_weight", rowwise=False)


def component(x, idx: int):
    """Order-0 jet holding one stacked component (0 = value, 1..D = d1, D+1.. = d2)."""
    xj = _val(x)
    out = Jet(xj.data[idx:idx + 1].copy(), 0, 0)
    shape = xj.data.shape

    def back(g, per_row):
        gx = np.zeros(shape)
        gx[idx] = g[0]
        return (gx,)

    return _record(out, (x,), back, "component")


def value_of(x):
    return component(x, 0)


def d1_of(x, k: int):
    xj = _val(x)
    if xj.order < 1:
        raise StructuralError("jet carries no first derivatives")
    return component(x, 1 + k)


def d2_of(x, k: int):
    xj = _val(x)
    if xj.order < 2:
        raise StructuralError("jet carries no second derivatives")
    return component(x, 1 + xj.ndim + k)


def sum_rows(x):
    xj = _val(x)
    out = xj.like(xj.data.sum(axis=1, keepdims=True))
    n = xj.data.shape[1]
    return _record(out, (x,), lambda g, pr: (np.repeat(g, n, axis=1),), "sum_rows", rowwise=False)


def mean_rows(x):
    n = _val(x).data.shape[1]
    return scale(sum_rows(x), 1.0 / n)


def index_row(x, i: int):
    xj = _val(x)
    shape = xj.data.shape
    out = xj.like(xj.data[:, i:i + 1].copy())

    def back(g, per_row):
        gx = np.zeros(shape)
        gx[:, i:i + 1] = g
        return (gx,)

    return _record(out, (x,), back, "index_row", rowwise=False)


def gather(x: Node | np.ndarray, idx: np.ndarray):
    """Select entries of a flat parameter leaf (or array) as an order-0 column."""
    xv = _val(x)
    out = Jet(xv[idx].reshape(1, -1, 1).copy(), 0, 0)
    size = xv.shape

    def back(g, per_row):
        gx = np.zeros(size)
        np.add.at(gx, idx, g.reshape(-1))
        return (gx,)

    return _record(out, (x,), back, "gather", rowwise=False)


# ---------------------------------------------------------------------------

def eval_with_input_derivs(fn: Callable[[Jet], Jet], x: Sequence[float]) -> DualJet:
    """Evaluate a scalar jet function at one point, returning (u, du/dx_k, d2u/dx_k^2)."""
    xj = Jet.seed(np.asarray(x, dtype=np.float64).reshape(1, -1), order=2)
    out = _val(fn(xj))
    D = xj.ndim
    if out.order == 0:
        z = np.zeros(D)
        return DualJet(float(out.data[0, 0, 0]), z, z.copy())
    return DualJet(float(out.data[0, 0, 0]), out.data[1:1 + D, 0, 0].copy(),
                   out.data[1 + D:, 0, 0].copy())
