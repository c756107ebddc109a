"""Differentiable scalar fields on a chart.

The engine is a truncated multivariate Taylor arithmetic (:class:`Jet`):
every quantity carries its Taylor coefficients up to a fixed total order,
batched over arbitrarily many evaluation points.  Fields are small expression
trees (:class:`ScalarField`) that can be built from Python operators, from
the free math functions of this module, from Python callables, or parsed
from infix strings.  A central-difference oracle (:func:`fd_oracle`) is
provided for testing only.
"""

from __future__ import annotations

import ast
import itertools
import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import quadrature
from .errors import DomainError, ExpressionError, OrderError

MAX_ORDER = 4

__all__ = [
    "MAX_ORDER",
    "Chart",
    "Box",
    "Jet",
    "JetValue",
    "ScalarField",
    "eval_jet",
    "fd_oracle",
    "evaluate",
    "parse_expression",
    "einsum",
    "inv",
    "exp",
    "log",
    "sin",
    "cos",
    "sinh",
    "cosh",
    "tanh",
    "sqrt",
    "absolute",
    "power",
]


# ---------------------------------------------------------------------------
# chart and domain


@dataclass(frozen=True)
class Chart:
    """Local chart u = (x^1..x^n, y^1..y^m) with a signature per coordinate."""

    dim_h: int
    dim_v: int
    coordinate_names: tuple[str, ...] = ()
    signature: tuple[int, ...] = ()

    def __post_init__(self):
        if self.dim_h < 1 or self.dim_v < 1:
            raise ValueError("dim_h and dim_v must be >= 1")
        d = self.dim_h + self.dim_v
        names = tuple(self.coordinate_names) or tuple(
            [f"x{i + 1}" for i in range(self.dim_h)]
            + [f"y{self.dim_h + a + 1}" for a in range(self.dim_v)]
        )
        sig = tuple(int(s) for s in self.signature) or (1,) * d
        if len(names) != d or len(set(names)) != d:
            raise ValueError("coordinate_names must be %d distinct labels" % d)
        if len(sig) != d or any(s not in (1, -1) for s in sig):
            raise ValueError("signature entries must be +1 or -1, one per coordinate")
        object.__setattr__(self, "coordinate_names", names)
        object.__setattr__(self, "signature", sig)

    @property
    def dim(self) -> int:
        return self.dim_h + self.dim_v

    @property
    def h(self) -> slice:
        return slice(0, self.dim_h)

    @property
    def v(self) -> slice:
        return slice(self.dim_h, self.dim)

    def index(self, name: str | int) -> int:
        if isinstance(name, (int, np.integer)):
            if not 0 <= name < self.dim:
                raise IndexError(name)
            return int(name)
        return self.coordinate_names.index(name)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, optionally with excluded bands ``(axis, lo, hi)``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    excluded: tuple[tuple[int, float, float], ...] = ()

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        lo = np.asarray(self.lower, dtype=float).reshape((-1,) + (1,) * (p.ndim - 1))
        hi = np.asarray(self.upper, dtype=float).reshape((-1,) + (1,) * (p.ndim - 1))
        ok = np.all((p >= lo) & (p <= hi), axis=0)
        for axis, a, b in self.excluded:
            ok &= ~((p[axis] >= a) & (p[axis] <= b))
        return ok

    def check(self, points: np.ndarray) -> None:
        if not np.all(self.contains(points)):
            raise DomainError("evaluation point outside the declared field domain")


# ---------------------------------------------------------------------------
# multi-index tables


class _Tables:
    """Monomial bookkeeping for d variables up to total order K."""

    def __init__(self, d: int, K: int):
        self.d, self.K = d, K
        exps: list[tuple[int, ...]] = []
        for deg in range(K + 1):
            for combo in itertools.combinations_with_replacement(range(d), deg):
                e = [0] * d
                for ax in combo:
                    e[ax] += 1
                exps.append(tuple(e))
        self.exps = exps
        self.n = len(exps)
        self.index = {e: i for i, e in enumerate(exps)}
        self.degree = np.array([sum(e) for e in exps])
        self.fact = np.array([math.prod(math.factorial(k) for k in e) for e in exps], dtype=float)
        pairs = []
        for i, ei in enumerate(exps):
            for j, ej in enumerate(exps):
                if sum(ei) + sum(ej) <= K:
                    k = self.index[tuple(a + b for a, b in zip(ei, ej))]
                    pairs.append((k, i, j))
        pairs.sort()
        arr = np.array(pairs, dtype=np.intp)
        self.mk, self.mi, self.mj = arr[:, 0], arr[:, 1], arr[:, 2]
        self.starts = np.flatnonzero(np.r_[True, np.diff(self.mk) != 0])
        self._shift: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def shift(self, axis: int) -> tuple[np.ndarray, np.ndarray]:
        """Source indices and factors mapping order-K coefficients to those of d/du^axis."""
        if axis not in self._shift:
            low = tables(self.d, self.K - 1)
            src = np.empty(low.n, dtype=np.intp)
            fac = np.empty(low.n)
            for t, e in enumerate(low.exps):
                s = list(e)
                s[axis] += 1
                src[t] = self.index[tuple(s)]
                fac[t] = s[axis]
            self._shift[axis] = (src, fac)
        return self._shift[axis]


@lru_cache(maxsize=None)
def tables(d: int, K: int) -> _Tables:
    return _Tables(d, K)


def multi_index_to_exponent(multi: Sequence[int], d: int) -> tuple[int, ...]:
    e = [0] * d
    for ax in multi:
        e[ax] += 1
    return tuple(e)


def exponent_to_multi_index(e: Sequence[int]) -> tuple[int, ...]:
    return tuple(ax for ax, k in enumerate(e) for _ in range(k))


# ---------------------------------------------------------------------------
# truncated Taylor arithmetic


def _is_jet(x) -> bool:
    return isinstance(x, Jet)


class Jet:
    """Truncated Taylor expansion in ``d`` variables to total order ``K``.

    ``c[k]`` is the Taylor coefficient of monomial ``tables(d, K).exps[k]``
    (partial derivative divided by the multi-factorial); the trailing axes of
    ``c`` are tensor/batch axes and broadcast like numpy arrays.
    """

    __slots__ = ("c", "d", "K")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, c: np.ndarray, d: int, K: int):
        self.c = c
        self.d = d
        self.K = K

    # construction -----------------------------------------------------------
    @classmethod
    def constant(cls, value, d: int, K: int) -> "Jet":
        value = np.asarray(value, dtype=float)
        c = np.zeros((tables(d, K).n,) + value.shape)
        c[0] = value
        return cls(c, d, K)

    @classmethod
    def variable(cls, value, axis: int, d: int, K: int) -> "Jet":
        j = cls.constant(value, d, K)
        if K >= 1:
            e = [0] * d
            e[axis] = 1
            j.c[tables(d, K).index[tuple(e)]] = 1.0
        return j

    @property
    def shape(self) -> tuple[int, ...]:
        return self.c.shape[1:]

    @property
    def value(self) -> np.ndarray:
        return self.c[0]

    def truncate(self, K: int) -> "Jet":
        if K == self.K:
            return self
        if K > self.K:
            raise OrderError(f"cannot raise jet order from {self.K} to {K}")
        return Jet(self.c[: tables(self.d, K).n], self.d, K)

    def partial(self, multi: Sequence[int] = ()) -> np.ndarray:
        e = multi_index_to_exponent(multi, self.d)
        T = tables(self.d, self.K)
        if sum(e) > self.K:
            raise OrderError(f"partial of order {sum(e)} exceeds jet order {self.K}")
        k = T.index[e]
        return self.c[k] * T.fact[k]

    def d_(self, axis: int) -> "Jet":
        """Partial derivative along ``axis``; the result has order K-1."""
        if self.K < 1:
            raise OrderError("cannot differentiate an order-0 jet")
        src, fac = tables(self.d, self.K).shift(axis)
        fac = fac.reshape((-1,) + (1,) * (self.c.ndim - 1))
        return Jet(self.c[src] * fac, self.d, self.K - 1)

    # tensor-axis helpers ----------------------------------------------------------
    def __getitem__(self, idx) -> "Jet":
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Jet(self.c[(slice(None),) + idx], self.d, self.K)

    def __setitem__(self, idx, val) -> None:
        if not isinstance(idx, tuple):
            idx = (idx,)
        if _is_jet(val):
            val = val.truncate(self.K) if val.K > self.K else val
            if val.K < self.K:
                raise OrderError("assigning a lower-order jet into a higher-order one")
            self.c[(slice(None),) + idx] = val.c
        else:
            self.c[(slice(None),) + idx] = 0.0
            self.c[(0,) + idx] = val

    def copy(self) -> "Jet":
        return Jet(self.c.copy(), self.d, self.K)

    def swapaxes(self, a: int, b: int) -> "Jet":
        return Jet(np.swapaxes(self.c, a + 1 if a >= 0 else a, b + 1 if b >= 0 else b), self.d, self.K)

    def reshape(self, *shape) -> "Jet":
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        return Jet(self.c.reshape((self.c.shape[0],) + tuple(shape)), self.d, self.K)

    def sum(self, axis=None) -> "Jet":
        if axis is None:
            axis = tuple(range(1, self.c.ndim))
        elif isinstance(axis, int):
            axis = axis + 1 if axis >= 0 else axis
        else:
            axis = tuple(a + 1 if a >= 0 else a for a in axis)
        return Jet(self.c.sum(axis=axis), self.d, self.K)

    # arithmetic -----------------------------------------------------------------
    def _pair(self, other):
        if _is_jet(other):
            K = min(self.K, other.K)
            a, b = self.truncate(K), other.truncate(K)
            if a.c.ndim != b.c.ndim:
                a, b = _pad(a, b.c.ndim), _pad(b, a.c.ndim)
            return a, b
        return self, None

    def _scaled(self, other) -> np.ndarray:
        x = np.asarray(other, dtype=float)
        return _pad(self, x.ndim + 1).c

    def __neg__(self):
        return Jet(-self.c, self.d, self.K)

    def __pos__(self):
        return self

    def __add__(self, other):
        a, b = self._pair(other)
        if b is not None:
            return Jet(a.c + b.c, a.d, a.K)
        other = np.asarray(other, dtype=float)
        c = self._scaled(other) + np.zeros_like(other)
        c[0] = c[0] + other
        return Jet(c, self.d, self.K)

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        a, b = self._pair(other)
        if b is None:
            return Jet(self._scaled(other) * np.asarray(other, dtype=float), self.d, self.K)
        T = tables(a.d, a.K)
        if a.K == 0:
            return Jet(a.c * b.c, a.d, 0)
        p = a.c[T.mi] * b.c[T.mj]
        return Jet(np.add.reduceat(p, T.starts, axis=0), a.d, a.K)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if _is_jet(other):
            return self * other.reciprocal()
        return Jet(self._scaled(other) / np.asarray(other, dtype=float), self.d, self.K)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, p):
        if _is_jet(p):
            return exp(p * log(self))
        if isinstance(p, (int, np.integer)) or (np.ndim(p) == 0 and float(p).is_integer()):
            p = int(p)
            if p == 0:
                return Jet.constant(np.ones(self.shape), self.d, self.K)
            if p < 0:
                return (self ** (-p)).reciprocal()
            result, base = None, self
            while p:
                if p & 1:
                    result = base if result is None else result * base
                p >>= 1
                if p:
                    base = base * base
            return result
        return self._real_power(float(p))

    def __rpow__(self, base):
        return exp(self * np.log(np.asarray(base, dtype=float)))

    # univariate composition -------------------------------------------------------
    def compose(self, derivs: Sequence[np.ndarray]) -> "Jet":
        """Apply f with derivative values ``derivs[k] = f^(k)(value)``."""
        out = np.zeros_like(self.c)
        out[0] = derivs[0]
        if self.K == 0:
            return Jet(out, self.d, 0)
        hc = self.c.copy()
        hc[0] = 0.0
        h = Jet(hc, self.d, self.K)
        hk = h
        for k in range(1, self.K + 1):
            out = out + hk.c * (derivs[k] / math.factorial(k))
            if k < self.K:
                hk = hk * h
        return Jet(out, self.d, self.K)

    def reciprocal(self) -> "Jet":
        a = self.c[0]
        return self.compose([(-1.0) ** k * math.factorial(k) / a ** (k + 1) for k in range(self.K + 1)])

    def _real_power(self, p: float) -> "Jet":
        a = self.c[0]
        derivs, coef = [], 1.0
        for k in range(self.K + 1):
            derivs.append(coef * a ** (p - k))
            coef *= p - k
        return self.compose(derivs)

    def __repr__(self) -> str:
        return f"Jet(d={self.d}, K={self.K}, shape={self.shape})"


def _pad(j: Jet, ndim: int) -> Jet:
    """Insert singleton tensor axes right after the coefficient axis."""
    extra = ndim - j.c.ndim
    if extra <= 0:
        return j
    return Jet(j.c.reshape((j.c.shape[0],) + (1,) * extra + j.c.shape[1:]), j.d, j.K)


# free functions dispatching on float / ndarray / Jet / ScalarField --------------------


def _dispatch(name: str, x, jet_impl: Callable[["Jet"], "Jet"], np_impl: Callable):
    if isinstance(x, ScalarField):
        return x._unary(name)
    if _is_jet(x):
        return jet_impl(x)
    return np_impl(x)


def exp(x):
    return _dispatch("exp", x, lambda j: j.compose([np.exp(j.c[0])] * (j.K + 1)), np.exp)


def log(x):
    def _j(j: Jet) -> Jet:
        a = j.c[0]
        return j.compose([np.log(a)] + [(-1.0) ** (k - 1) * math.factorial(k - 1) / a**k for k in range(1, j.K + 1)])

    return _dispatch("log", x, _j, np.log)


def sin(x):
    def _j(j: Jet) -> Jet:
        s, c = np.sin(j.c[0]), np.cos(j.c[0])
        return j.compose([[s, c, -s, -c][k % 4] for k in range(j.K + 1)])

    return _dispatch("sin", x, _j, np.sin)


def cos(x):
    def _j(j: Jet) -> Jet:
        s, c = np.sin(j.c[0]), np.cos(j.c[0])
        return j.compose([[c, -s, -c, s][k % 4] for k in range(j.K + 1)])

    return _dispatch("cos", x, _j, np.cos)


def sinh(x):
    def _j(j: Jet) -> Jet:
        s, c = np.sinh(j.c[0]), np.cosh(j.c[0])
        return j.compose([[s, c][k % 2] for k in range(j.K + 1)])

    return _dispatch("sinh", x, _j, np.sinh)


def cosh(x):
    def _j(j: Jet) -> Jet:
        s, c = np.sinh(j.c[0]), np.cosh(j.c[0])
        return j.compose([[c, s][k % 2] for k in range(j.K + 1)])

    return _dispatch("cosh", x, _j, np.cosh)


def tanh(x):
    return _dispatch("tanh", x, lambda j: sinh(j) / cosh(j), np.tanh)


def sqrt(x):
    return _dispatch("sqrt", x, lambda j: j._real_power(0.5), np.sqrt)


def absolute(x):
    def _j(j: Jet) -> Jet:
        s = np.sign(j.c[0])
        if j.K > 0 and np.any(s == 0):
            raise DomainError("abs() is not differentiable at a zero of its argument")
        return j * s

    return _dispatch("abs", x, _j, np.abs)


def power(x, p):
    return x**p


def einsum(spec: str, *ops):
    """``numpy.einsum`` that also accepts jets (at most two operands)."""
    if not any(_is_jet(o) for o in ops):
        return np.einsum(spec, *ops)
    ins, out = spec.replace(" ", "").split("->")
    subs = ins.split(",")
    if len(ops) == 1:
        j = ops[0]
        return Jet(np.einsum(f"Z{subs[0]}->Z{out}", j.c), j.d, j.K)
    if len(ops) != 2:
        raise ValueError("jet einsum supports one or two operands")
    a, b = ops
    if _is_jet(a) and _is_jet(b):
        K = min(a.K, b.K)
        a, b = a.truncate(K), b.truncate(K)
        if K == 0:
            return Jet(np.einsum(f"Z{subs[0]},Z{subs[1]}->Z{out}", a.c, b.c), a.d, 0)
        T = tables(a.d, K)
        p = np.einsum(f"Z{subs[0]},Z{subs[1]}->Z{out}", a.c[T.mi], b.c[T.mj])
        return Jet(np.add.reduceat(p, T.starts, axis=0), a.d, K)
    if _is_jet(a):
        return Jet(np.einsum(f"Z{subs[0]},{subs[1]}->Z{out}", a.c, b), a.d, a.K)
    return Jet(np.einsum(f"{subs[0]},Z{subs[1]}->Z{out}", a, b.c), b.d, b.K)


def _np_inv(A: np.ndarray) -> np.ndarray:
    """Inverse over the first two axes of ``A`` (batch axes trailing)."""
    Am = np.moveaxis(np.moveaxis(A, 0, -1), 0, -1)
    Ai = np.linalg.inv(Am)
    return np.moveaxis(np.moveaxis(Ai, -1, 0), -1, 0)


def inv(A):
    """Matrix inverse over the two leading tensor axes; jets via a Neumann series."""
    if not _is_jet(A):
        return _np_inv(np.asarray(A, dtype=float))
    X0 = _np_inv(A.c[0])
    H = A.copy()
    H.c[0] = 0.0
    B = -einsum("ij...,jk...->ik...", X0, H)
    out = Jet.constant(X0, A.d, A.K)
    term = out
    for _ in range(A.K):
        term = einsum("ij...,jk...->ik...", B, term)
        out = out + term
    return out


def stack(items: Sequence, axis: int = 0):
    """Stack jets (or arrays) along a new tensor axis."""
    if any(_is_jet(x) for x in items):
        jets = [x for x in items if _is_jet(x)]
        d, K = jets[0].d, min(j.K for j in jets)
        cs = []
        for x in items:
            j = x.truncate(K) if _is_jet(x) else Jet.constant(x, d, K)
            cs.append(j.c)
        cs = np.broadcast_arrays(*cs)
        ax = axis + 1 if axis >= 0 else axis
        return Jet(np.stack(cs, axis=ax), d, K)
    return np.stack(np.broadcast_arrays(*[np.asarray(x, dtype=float) for x in items]), axis=axis)


# ---------------------------------------------------------------------------
# expression nodes


class _Ctx:
    """One evaluation pass: base points plus a memo shared by all nodes."""

    def __init__(self, points: np.ndarray, quad_tol: float | None = None):
        self.points = points
        self.d = points.shape[0]
        self.memo: dict[tuple[int, int], Jet] = {}
        self.quad_tol = quad_tol

    def eval(self, node: "_Node", K: int) -> Jet:
        key = (id(node), K)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        for KK in range(K + 1, K + 3):
            hit = self.memo.get((id(node), KK))
            if hit is not None:
                return hit.truncate(K)
        val = node._eval(self, K)
        self.memo[key] = val
        return val


class _Node:
    smooth: int = MAX_ORDER

    def _eval(self, ctx: _Ctx, K: int) -> Jet:  # pragma: no cover - abstract
        raise NotImplementedError


class _Const(_Node):
    def __init__(self, value: float):
        self.value = float(value)

    def _eval(self, ctx, K):
        return Jet.constant(np.full(ctx.points.shape[1:], self.value), ctx.d, K)


class _Coord(_Node):
    def __init__(self, axis: int):
        self.axis = axis

    def _eval(self, ctx, K):
        return Jet.variable(ctx.points[self.axis], self.axis, ctx.d, K)


_UNARY = {
    "exp": exp,
    "log": log,
    "sin": sin,
    "cos": cos,
    "sinh": sinh,
    "cosh": cosh,
    "tanh": tanh,
    "sqrt": sqrt,
    "abs": absolute,
    "neg": lambda j: -j,
}


class _Unary(_Node):
    def __init__(self, name: str, child: _Node):
        self.name, self.child = name, child
        self.smooth = child.smooth

    def _eval(self, ctx, K):
        return _UNARY[self.name](ctx.eval(self.child, K))


class _Binary(_Node):
    _OPS = {
        "+": lambda a, b: a + b,
        "-": lambda a, b: a - b,
        "*": lambda a, b: a * b,
        "/": lambda a, b: a / b,
        "**": lambda a, b: a**b,
    }

    def __init__(self, op: str, a: _Node, b: _Node):
        self.op, self.a, self.b = op, a, b
        self.smooth = min(a.smooth, b.smooth)

    def _eval(self, ctx, K):
        a = ctx.eval(self.a, K)
        if self.op == "**" and isinstance(self.b, _Const):
            return a**self.b.value
        return self._OPS[self.op](a, ctx.eval(self.b, K))


class _Deriv(_Node):
    def __init__(self, child: _Node, axis: int):
        self.child, self.axis = child, axis
        self.smooth = child.smooth - 1

    def _eval(self, ctx, K):
        return ctx.eval(self.child, K + 1).d_(self.axis)


class _Callable(_Node):
    def __init__(self, fn: Callable, smooth: int = MAX_ORDER):
        self.fn = fn
        self.smooth = smooth

    def _eval(self, ctx, K):
        coords = [Jet.variable(ctx.points[i], i, ctx.d, K) for i in range(ctx.d)]
        out = self.fn(*coords)
        if not _is_jet(out):
            out = Jet.constant(np.broadcast_to(np.asarray(out, dtype=float), ctx.points.shape[1:]), ctx.d, K)
        return out


class _Integral(_Node):
    """I(u) = int_{lower}^{u^axis} child(u with u^axis -> s) ds.

    ``method="line"`` (default) groups points into lines along ``axis`` and uses
    one Clenshaw-Curtis fit per line; ``"simpson"`` integrates every point
    separately with adaptive composite Simpson.
    """

    def __init__(self, child: _Node, axis: int, lower: float, tol: float | None = None, method: str = "line"):
        if method not in ("line", "simpson"):
            raise ValueError("integration method must be 'line' or 'simpson'")
        self.child, self.axis, self.lower, self.tol, self.method = child, axis, float(lower), tol, method
        self.smooth = child.smooth

    def _eval(self, ctx, K):
        d = ctx.d
        T = tables(d, K)
        batch = ctx.points.shape[1:]
        c = np.zeros((T.n,) + batch)
        along = np.array([e[self.axis] for e in T.exps])
        if K >= 1:
            g = ctx.eval(self.child, K - 1)
            Tg = tables(d, K - 1)
            for k, e in enumerate(T.exps):
                if e[self.axis] >= 1:
                    s = list(e)
                    s[self.axis] -= 1
                    c[k] = g.c[Tg.index[tuple(s)]] / e[self.axis]
        sel = np.flatnonzero(along == 0)
        tol = self.tol if self.tol is not None else (ctx.quad_tol or quadrature.DEFAULT_TOL)
        if self.method == "simpson":
            c[sel] = self._simpson(ctx, K, sel, tol)
        else:
            c[sel] = self._lines(ctx, K, sel, tol)
        return Jet(c, d, K)

    def _simpson(self, ctx, K, sel, tol):
        upper = ctx.points[self.axis]
        span = upper - self.lower

        def integrand(s: np.ndarray) -> np.ndarray:
            pts = np.repeat(ctx.points[..., None], s.size, axis=-1)
            pts[self.axis] = self.lower + span[..., None] * s
            gj = _Ctx(pts, ctx.quad_tol).eval(self.child, K)
            return gj.c[sel] * span[..., None]

        return quadrature.simpson_unit(integrand, tol=tol)

    def _lines(self, ctx, K, sel, tol):
        d = ctx.d
        batch = ctx.points.shape[1:]
        flat = ctx.points.reshape(d, -1)
        others = np.delete(flat, self.axis, axis=0)
        keys, group = np.unique(others.T, axis=0, return_inverse=True)
        group = group.reshape(-1)
        u = flat[self.axis]
        G = keys.shape[0]
        lo = np.full(G, self.lower)
        hi = np.full(G, self.lower)
        np.minimum.at(lo, group, u)
        np.maximum.at(hi, group, u)

        def integrand(v: np.ndarray) -> np.ndarray:
            pts = np.empty((d,) + v.shape)
            pts[np.arange(d) != self.axis] = keys.T[:, :, None]
            pts[self.axis] = v
            gj = _Ctx(pts, ctx.quad_tol).eval(self.child, K)
            return gj.c[sel]

        out = quadrature.line_integrals(integrand, lo, hi, self.lower, u, group, tol=tol)
        return out.reshape((len(sel),) + batch)


class _Restrict(_Node):
    """child with coordinate ``axis`` frozen at ``value`` (a slice of the field)."""

    def __init__(self, child: _Node, axis: int, value: float):
        self.child, self.axis, self.value = child, axis, float(value)
        self.smooth = child.smooth

    def _eval(self, ctx, K):
        pts = ctx.points.copy()
        pts[self.axis] = self.value
        j = _Ctx(pts, ctx.quad_tol).eval(self.child, K)
        along = np.array([e[self.axis] for e in tables(ctx.d, K).exps])
        c = j.c.copy()
        c[along > 0] = 0.0
        return Jet(c, ctx.d, K)


def _depends(node: _Node, axis: int) -> bool:
    if isinstance(node, _Const):
        return False
    if isinstance(node, _Coord):
        return node.axis == axis
    if isinstance(node, _Unary):
        return _depends(node.child, axis)
    if isinstance(node, _Binary):
        return _depends(node.a, axis) or _depends(node.b, axis)
    if isinstance(node, _Deriv):
        return _depends(node.child, axis)
    if isinstance(node, _Integral):
        return node.axis == axis or _depends(node.child, axis)
    if isinstance(node, _Restrict):
        return node.axis != axis and _depends(node.child, axis)
    return True  # opaque callables


def _as_node(x) -> _Node:
    if isinstance(x, ScalarField):
        return x.node
    if isinstance(x, _Node):
        return x
    if np.ndim(x) == 0:
        return _Const(float(x))
    raise TypeError(f"cannot use {type(x).__name__} in a field expression")


# ---------------------------------------------------------------------------
# scalar fields


class ScalarField:
    """Evaluable real function of the chart coordinates with jets to order ``smoothness``."""

    def __init__(
        self,
        node: _Node,
        chart: Chart,
        smoothness: int | None = None,
        domain: Box | None = None,
        overrides: Mapping[tuple[int, ...], Callable[[np.ndarray], np.ndarray]] | None = None,
        name: str | None = None,
    ):
        self.node = node
        self.chart = chart
        self.smoothness = node.smooth if smoothness is None else int(smoothness)
        self.domain = domain
        self.overrides = {tuple(sorted(k)): v for k, v in (overrides or {}).items()}
        self.name = name

    # constructors ---------------------------------------------------------------
    @classmethod
    def constant(cls, value: float, chart: Chart) -> "ScalarField":
        return cls(_Const(value), chart)

    @classmethod
    def coordinate(cls, which: str | int, chart: Chart) -> "ScalarField":
        return cls(_Coord(chart.index(which)), chart)

    @classmethod
    def from_callable(cls, fn: Callable, chart: Chart, smoothness: int = MAX_ORDER, **kw) -> "ScalarField":
        """Wrap ``fn(u1, ..., ud)`` written with this module's math functions."""
        return cls(_Callable(fn, smoothness), chart, **kw)

    @classmethod
    def parse(cls, text: str, chart: Chart, params: Mapping[str, float] | None = None, **kw) -> "ScalarField":
        return cls(parse_expression(text, chart, params), chart, **kw)

    def with_domain(self, domain: Box | None) -> "ScalarField":
        return ScalarField(self.node, self.chart, self.smoothness, domain, self.overrides, self.name)

    # composition ----------------------------------------------------------------
    def _wrap(self, node: _Node, other=None) -> "ScalarField":
        dom = self.domain
        if dom is None and isinstance(other, ScalarField):
            dom = other.domain
        return ScalarField(node, self.chart, domain=dom)

    def _bin(self, op, other, reverse=False):
        a, b = self.node, _as_node(other)
        if reverse:
            a, b = b, a
        return self._wrap(_Binary(op, a, b), other)

    def __add__(self, o):
        return self._bin("+", o)

    def __radd__(self, o):
        return self._bin("+", o, True)

    def __sub__(self, o):
        return self._bin("-", o)

    def __rsub__(self, o):
        return self._bin("-", o, True)

    def __mul__(self, o):
        return self._bin("*", o)

    def __rmul__(self, o):
        return self._bin("*", o, True)

    def __truediv__(self, o):
        return self._bin("/", o)

    def __rtruediv__(self, o):
        return self._bin("/", o, True)

    def __pow__(self, o):
        return self._bin("**", o)

    def __rpow__(self, o):
        return self._bin("**", o, True)

    def __neg__(self):
        return self._wrap(_Unary("neg", self.node))

    def _unary(self, name: str) -> "ScalarField":
        return self._wrap(_Unary(name, self.node))

    def diff(self, which: str | int) -> "ScalarField":
        return self._wrap(_Deriv(self.node, self.chart.index(which)))

    def integrate(
        self, which: str | int, lower: float, tol: float | None = None, method: str = "line"
    ) -> "ScalarField":
        """Field u -> int_{lower}^{u^which} self ds (quadrature node)."""
        return self._wrap(_Integral(self.node, self.chart.index(which), lower, tol, method))

    def at(self, which: str | int, value: float) -> "ScalarField":
        """The field with coordinate ``which`` frozen at ``value``."""
        return self._wrap(_Restrict(self.node, self.chart.index(which), value))

    def depends_on(self, which: str | int) -> bool:
        """Structural (conservative) test whether the expression involves ``which``."""
        return _depends(self.node, self.chart.index(which))

    # evaluation -------------------------------------------------------------------
    def jet(self, points, order: int, quad_tol: float | None = None) -> Jet:
        """Batched jet; ``points`` has the coordinate axis first."""
        return evaluate([self], points, order, quad_tol)[0]

    def __call__(self, points) -> np.ndarray:
        return self.jet(points, 0).value


def _points_array(points, d: int) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    if p.shape[:1] != (d,):
        raise ValueError(f"points must have the coordinate axis (length {d}) first; got shape {p.shape}")
    return p


def evaluate(
    fields: Sequence[ScalarField], points, order: int, quad_tol: float | None = None
) -> list[Jet]:
    """Evaluate several fields in one pass, sharing common sub-expressions."""
    if not fields:
        return []
    d = fields[0].chart.dim
    p = _points_array(points, d)
    if order < 0:
        raise OrderError("order must be nonnegative")
    ctx = _Ctx(p, quad_tol)
    out = []
    for f in fields:
        if order > f.smoothness:
            raise OrderError(f"order {order} exceeds declared smoothness {f.smoothness}")
        if f.domain is not None:
            f.domain.check(p)
        j = ctx.eval(f.node, order)
        if f.overrides:
            j = j.copy()
            T = tables(d, order)
            for multi, fn in f.overrides.items():
                if len(multi) <= order:
                    k = T.index[multi_index_to_exponent(multi, d)]
                    j.c[k] = np.broadcast_to(fn(p), p.shape[1:]) / T.fact[k]
        out.append(j)
    return out


# ---------------------------------------------------------------------------
# point jets


@dataclass
class JetValue:
    """Value and partial derivatives at one point; multi-indices are canonical sorted tuples."""

    order: int
    value: float
    partials: dict[tuple[int, ...], float] = dc_field(default_factory=dict)

    def __getitem__(self, multi: Iterable[int]) -> float:
        key = tuple(sorted(multi))
        if key == ():
            return self.value
        return self.partials[key]

    @classmethod
    def from_jet(cls, j: Jet) -> "JetValue":
        T = tables(j.d, j.K)
        parts = {}
        for k, e in enumerate(T.exps[1:], start=1):
            parts[exponent_to_multi_index(e)] = float(j.c[k] * T.fact[k])
        return cls(j.K, float(j.c[0]), parts)


def eval_jet(field: ScalarField, point, order: int) -> JetValue:
    """Value and all partials up to ``order`` at a single point."""
    if order > MAX_ORDER:
        raise OrderError(f"order {order} exceeds the engine cap {MAX_ORDER}")
    p = np.asarray(point, dtype=float).reshape(field.chart.dim)
    return JetValue.from_jet(field.jet(p, order))


_STENCILS = {
    0: ({0: 1.0}, 0),
    1: ({-1: -0.5, 1: 0.5}, 1),
    2: ({-1: 1.0, 0: -2.0, 1: 1.0}, 2),
    3: ({-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5}, 3),
    4: ({-2: 1.0, -1: -4.0, 0: 6.0, 1: -4.0, 2: 1.0}, 4),
}
_DEFAULT_STEPS = {1: 1e-3, 2: 2e-3, 3: 1e-2, 4: 2e-2}


def fd_oracle(field: ScalarField, point, order: int, step: float | None = None) -> JetValue:
    """Central-difference estimate of all partials up to ``order`` (test oracle only).

    Tensor-product second-order stencils at steps h and h/2 combined by one
    Richardson level.  With ``step=None`` a per-derivative-order default is used.
    """
    if order > MAX_ORDER:
        raise OrderError(f"order {order} exceeds {MAX_ORDER}")
    d = field.chart.dim
    p = np.asarray(point, dtype=float).reshape(d)
    if step is not None and step <= 0:
        raise ValueError("step must be positive")
    if field.domain is not None:
        field.domain.check(p)
        reach = order * (step or max(_DEFAULT_STEPS.values()))
        for ax in range(d):
            for sgn in (-1, 1):
                q = p.copy()
                q[ax] += sgn * reach
                if not field.domain.contains(q):
                    raise DomainError("point too close to the domain boundary for the stencil")
    value = float(field(p))
    parts: dict[tuple[int, ...], float] = {}
    for k in range(1, order + 1):
        h0 = step if step is not None else _DEFAULT_STEPS[k]
        for multi in itertools.combinations_with_replacement(range(d), k):
            e = multi_index_to_exponent(multi, d)
            ests = []
            for h in (h0, h0 / 2):
                offsets, weights = [np.zeros(d)], [1.0]
                for ax, cnt in enumerate(e):
                    if cnt == 0:
                        continue
                    st, pw = _STENCILS[cnt]
                    new_off, new_w = [], []
                    for off, w in zip(offsets, weights):
                        for s, ws in st.items():
                            o = off.copy()
                            o[ax] += s * h
                            new_off.append(o)
                            new_w.append(w * ws / h**pw)
                    offsets, weights = new_off, new_w
                pts = p[:, None] + np.array(offsets).T
                ests.append(float(np.dot(field(pts), weights)))
            parts[multi] = (4.0 * ests[1] - ests[0]) / 3.0
    return JetValue(order, value, parts)


# ---------------------------------------------------------------------------
# expression grammar


_FUNCS = {"exp", "log", "sin", "cos", "sinh", "cosh", "tanh", "sqrt", "abs"}
_CONSTS = {"pi": math.pi, "e": math.e}


def parse_expression(text: str, chart: Chart, params: Mapping[str, float] | None = None) -> _Node:
    """Parse an infix expression into a field node.

    Grammar: numbers, coordinate names, parameter names, ``pi``, ``e``;
    operators ``+ - * /`` and ``**`` (``^`` is accepted as a synonym);
    functions exp, log, sin, cos, sinh, cosh, tanh, sqrt, abs;
    ``diff(expr, coord)`` and ``integral(expr, coord, lower)``.
    """
    params = dict(params or {})
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"malformed expression {text!r}: {exc.msg}", exc.lineno, exc.offset) from None

    def err(node: ast.AST, msg: str):
        raise ExpressionError(msg, getattr(node, "lineno", None), getattr(node, "col_offset", -1) + 1)

    def coord_axis(node: ast.AST) -> int:
        if not isinstance(node, ast.Name) or node.id not in chart.coordinate_names:
            err(node, "expected a coordinate name")
        return chart.index(node.id)

    def number(node: ast.AST) -> float:
        val = build(node)
        if not isinstance(val, _Const):
            err(node, "expected a constant")
        return val.value

    def build(node: ast.AST) -> _Node:
        if isinstance(node, ast.Expression):
            return build(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return _Const(node.value)
        if isinstance(node, ast.Name):
            if node.id in chart.coordinate_names:
                return _Coord(chart.index(node.id))
            if node.id in params:
                return _Const(params[node.id])
            if node.id in _CONSTS:
                return _Const(_CONSTS[node.id])
            err(node, f"unknown name {node.id!r}")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            inner = build(node.operand)
            if isinstance(node.op, ast.UAdd):
                return inner
            if isinstance(inner, _Const):
                return _Const(-inner.value)
            return _Unary("neg", inner)
        if isinstance(node, ast.BinOp):
            ops = {ast.Add: "+", ast.Sub: "-", ast.Mult: "*", ast.Div: "/", ast.Pow: "**"}
            op = ops.get(type(node.op))
            if op is None:
                err(node, "unsupported operator")
            a, b = build(node.left), build(node.right)
            if isinstance(a, _Const) and isinstance(b, _Const):
                return _Const(_Binary._OPS[op](a.value, b.value))
            return _Binary(op, a, b)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and not node.keywords:
            name = node.func.id
            if name in _FUNCS:
                if len(node.args) != 1:
                    err(node, f"{name}() takes one argument")
                arg = build(node.args[0])
                if isinstance(arg, _Const):
                    return _Const(float(_UNARY[name](np.float64(arg.value))))
                return _Unary(name, arg)
            if name == "diff":
                if len(node.args) != 2:
                    err(node, "diff(expr, coord) takes two arguments")
                return _Deriv(build(node.args[0]), coord_axis(node.args[1]))
            if name == "integral":
                if len(node.args) != 3:
                    err(node, "integral(expr, coord, lower) takes three arguments")
                return _Integral(build(node.args[0]), coord_axis(node.args[1]), number(node.args[2]))
            err(node, f"unknown function {name!r}")
        err(node, f"unsupported syntax {type(node).__name__}")

    return build(tree)
