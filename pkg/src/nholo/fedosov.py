"""Formal Wick algebra, Fedosov operators and star products.

Elements of W (x) Lambda are finite sums of terms ``c(u) v^r z^e e^w`` where
``e`` is an exponent vector of the fibre variables z^alpha, ``w`` a strictly
increasing tuple of N-adapted coframe indices and ``c`` a truncated Taylor
series in u around the base point u0 (complex coefficients, the only place
besides :mod:`nholo.clifford` where complex numbers appear).  Every base
derivative lowers the Taylor order by one, so identities hold exactly on
all retained Taylor coefficients; the value at u0 is the order-0 entry.

Gradings: ``deg_v = r``, ``deg_s = |e|``, ``deg_a = |w|`` and
``Deg = 2 deg_v + deg_s``; terms above the configured ``deg_max`` are dropped
and the element is flagged as truncated.

Conventions (package-wide ``D_{e_b} e_a = Gamma^c_{ab} e_c``):

* ``theta^{ab}`` is the Poisson tensor with ``theta^{ab} theta_{ac} = delta^b_c``,
  ``Lambda^{ab} = theta^{ab} - i g^{ab}``;
* ``a o b = exp(i v/2 Lambda^{ab} d/dz^a d/dz1^b) a(z) b(z1)|_{z1=z}``;
* ``delta a = e^a ^ da/dz^a``, ``delta^{-1} a = z^a i_a(a) / (p + q)``;
* ``D a = e^mu ^ (e_mu a - Gamma^g_{b mu} z^b da/dz^g) + a d(forms)``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .connections import normal_coefficients, riemann_from, torsion_from
from .errors import OrderError, TruncationOverflow
from .fields import Chart, Jet, ScalarField, einsum, evaluate, inv, stack, tables
from .geometry import NConnection, adapted_derivatives, anholonomy_from, blockdiag
from .lagrange import LagrangianModel, complex_structure, lagrange_jets

__all__ = [
    "FormalElement",
    "FedosovContext",
    "FedosovResult",
    "StarCoefficients",
    "wick_product",
    "graded_commutator",
    "ad_over_v",
    "delta",
    "delta_inverse",
    "delta_ops",
    "sigma",
    "extend_D",
    "fedosov_D",
    "torsion_element",
    "curvature_element",
    "recursion_r",
    "tau_map",
    "fedosov_star",
    "moyal_star",
    "moyal_star_jet",
    "moyal_terms",
    "flatness_residual",
    "moyal_table",
    "associativity_defect",
    "random_element",
    "kahler_context",
    "lagrange_context",
    "DEG_MAX",
    "V_ORDER_CAP",
]

DEG_MAX = 6
V_ORDER_CAP = 2
MOYAL_ORDER_CAP = 3
_DIV_V_TOL = 1e-9

Key = tuple  # (r, z-exponents, wedge)


# ---------------------------------------------------------------------------
# truncated Taylor arrays (coefficient axis last)


@lru_cache(maxsize=None)
def _order_of_length(d: int) -> dict:
    return {tables(d, K).n: K for K in range(0, 16)}


def _order(a: np.ndarray, d: int) -> int:
    return _order_of_length(d)[a.shape[-1]]


def _trunc(a: np.ndarray, d: int, K: int) -> np.ndarray:
    return a[..., : tables(d, K).n]


def _tmul(a: np.ndarray, b: np.ndarray, d: int) -> np.ndarray:
    """Product of truncated Taylor arrays (broadcasting over leading axes)."""
    K = min(_order(a, d), _order(b, d))
    a, b = _trunc(a, d, K), _trunc(b, d, K)
    if K == 0:
        return a * b
    T = tables(d, K)
    return np.add.reduceat(a[..., T.mi] * b[..., T.mj], T.starts, axis=-1)


def _tderiv(a: np.ndarray, d: int, axis: int) -> np.ndarray:
    K = _order(a, d)
    if K == 0:
        raise OrderError("Taylor data exhausted: increase the context order")
    src, fac = tables(d, K).shift(axis)
    return a[..., src] * fac


def _taylor(j: Jet) -> np.ndarray:
    """Jet (coefficient axis first, single trailing batch point) -> Taylor array (coefficient axis last)."""
    c = j.c[..., 0] if j.c.ndim > 1 and j.c.shape[-1] == 1 else j.c
    return np.moveaxis(c, 0, -1).astype(complex)


def _const_taylor(x, d: int, K: int) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    out = np.zeros(x.shape + (tables(d, K).n,), dtype=complex)
    out[..., 0] = x
    return out


# ---------------------------------------------------------------------------
# wedge and exponent combinatorics


def _merge(w1: tuple, w2: tuple) -> tuple[int, tuple | None]:
    """Sign and canonical form of e^{w1} ^ e^{w2} (0, None when a factor repeats)."""
    if set(w1) & set(w2):
        return 0, None
    seq = list(w1) + list(w2)
    inv_count = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return (-1) ** inv_count, tuple(sorted(seq))


def _canon(seq: Sequence[int]) -> tuple[int, tuple | None]:
    if len(set(seq)) != len(seq):
        return 0, None
    inv_count = sum(1 for i in range(len(seq)) for j in range(i + 1, len(seq)) if seq[i] > seq[j])
    return (-1) ** inv_count, tuple(sorted(seq))


@lru_cache(maxsize=None)
def _sub_exponents(e: tuple, k: int) -> tuple:
    """Exponent vectors p <= e with |p| = k, with the falling-factorial weight e!/(e-p)!."""
    out = []
    for p in itertools.product(*[range(min(ei, k) + 1) for ei in e]):
        if sum(p) == k:
            w = math.prod(math.factorial(ei) // math.factorial(ei - pi) for ei, pi in zip(e, p))
            out.append((p, tuple(ei - pi for ei, pi in zip(e, p)), w))
    return tuple(out)


@lru_cache(maxsize=None)
def _exponents(d: int, k: int) -> tuple:
    out = []
    for combo in itertools.combinations_with_replacement(range(d), k):
        e = [0] * d
        for a in combo:
            e[a] += 1
        out.append(tuple(e))
    return tuple(out)


def _unit(d: int, a: int) -> tuple:
    e = [0] * d
    e[a] = 1
    return tuple(e)


def _add(e1: tuple, e2: tuple) -> tuple:
    return tuple(a + b for a, b in zip(e1, e2))


# ---------------------------------------------------------------------------
# formal elements


class FormalElement:
    """Finite sum of terms ``c(u) v^r z^e e^w`` with Taylor-series coefficients at u0."""

    __slots__ = ("d", "order", "terms", "deg_max", "truncated")

    def __init__(self, d: int, order: int, terms: Mapping | None = None, deg_max: int = DEG_MAX, truncated: bool = False):
        self.d = d
        self.order = order
        self.deg_max = deg_max
        self.truncated = truncated
        self.terms: dict[Key, np.ndarray] = {}
        n = tables(d, order).n
        for key, c in (terms or {}).items():
            r, e, w = key
            if len(e) != d:
                raise ValueError("exponent vector has the wrong length")
            if list(w) != sorted(set(w)) or any(not 0 <= x < d for x in w):
                raise ValueError("wedge factors must be strictly increasing coframe indices")
            c = np.asarray(c, dtype=complex)
            if c.ndim == 0:
                c = _const_taylor(c, d, order)
            if c.shape[-1] < n:
                raise OrderError("coefficient has lower Taylor order than the element")
            if 2 * r + sum(e) > deg_max:
                self.truncated = True
                continue
            self.terms[(int(r), tuple(int(x) for x in e), tuple(int(x) for x in w))] = c[..., :n]

    # constructors ---------------------------------------------------------------
    @classmethod
    def zero(cls, d: int, order: int, deg_max: int = DEG_MAX) -> "FormalElement":
        return cls(d, order, {}, deg_max)

    @classmethod
    def monomial(cls, d: int, z: Sequence[int] = (), w: Sequence[int] = (), r: int = 0, coef=1.0, order: int = 0, deg_max: int = DEG_MAX):
        """``coef * v^r * prod z^{z_i} * e^{w}``; ``z`` lists fibre indices (with repetition)."""
        e = [0] * d
        for a in z:
            e[a] += 1
        sign, ww = _canon(list(w))
        if sign == 0:
            return cls.zero(d, order, deg_max)
        c = np.asarray(coef, dtype=complex)
        if c.ndim == 0:
            c = _const_taylor(c, d, order)
        return cls(d, order, {(r, tuple(e), ww): sign * c}, deg_max)

    @classmethod
    def scalar(cls, coef: np.ndarray, d: int, deg_max: int = DEG_MAX) -> "FormalElement":
        """Function of u only (Taylor array ``coef``)."""
        coef = np.asarray(coef, dtype=complex)
        return cls(d, _order(coef, d), {(0, (0,) * d, ()): coef}, deg_max)

    # bookkeeping ------------------------------------------------------------------
    def copy(self) -> "FormalElement":
        return FormalElement(self.d, self.order, dict(self.terms), self.deg_max, self.truncated)

    def _new(self, terms, order=None, deg_max=None, truncated=False) -> "FormalElement":
        return FormalElement(
            self.d,
            self.order if order is None else order,
            terms,
            self.deg_max if deg_max is None else deg_max,
            self.truncated or truncated,
        )

    @staticmethod
    def degrees(key: Key) -> tuple[int, int, int, int]:
        """(deg_v, deg_s, deg_a, Deg) of a term key."""
        r, e, w = key
        s = sum(e)
        return r, s, len(w), 2 * r + s

    def gradings(self) -> set[tuple[int, int, int, int]]:
        return {self.degrees(k) for k in self.terms}

    def select(self, pred: Callable[[int, int, int, int], bool]) -> "FormalElement":
        return self._new({k: c for k, c in self.terms.items() if pred(*self.degrees(k))})

    def Deg(self, k: int) -> "FormalElement":
        return self.select(lambda r, s, a, D: D == k)

    def form_degree(self, q: int) -> "FormalElement":
        return self.select(lambda r, s, a, D: a == q)

    def bihomogeneous(self, p: int, q: int) -> "FormalElement":
        return self.select(lambda r, s, a, D: s == p and a == q)

    def truncate_order(self, K: int) -> "FormalElement":
        if K > self.order:
            raise OrderError("cannot raise Taylor order")
        return FormalElement(self.d, K, {k: _trunc(c, self.d, K) for k, c in self.terms.items()}, self.deg_max, self.truncated)

    def at_point(self) -> dict[Key, complex]:
        return {k: complex(c[..., 0]) for k, c in self.terms.items()}

    def norm(self, taylor: bool = True) -> float:
        """Max |coefficient| over all retained Taylor coefficients (or at u0 only)."""
        if not self.terms:
            return 0.0
        if taylor:
            return float(max(np.max(np.abs(c)) for c in self.terms.values()))
        return float(max(abs(c[..., 0]) for c in self.terms.values()))

    def cleaned(self, tol: float = 0.0) -> "FormalElement":
        return self._new({k: c for k, c in self.terms.items() if np.max(np.abs(c)) > tol})

    # arithmetic -------------------------------------------------------------------
    def _combine(self, other: "FormalElement", sign: float) -> "FormalElement":
        if other.d != self.d:
            raise ValueError("dimension mismatch")
        K = min(self.order, other.order)
        out = {k: _trunc(c, self.d, K).copy() for k, c in self.terms.items()}
        for k, c in other.terms.items():
            c = sign * _trunc(c, self.d, K)
            out[k] = out[k] + c if k in out else c
        return FormalElement(self.d, K, out, min(self.deg_max, other.deg_max), self.truncated or other.truncated)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __neg__(self):
        return self._new({k: -c for k, c in self.terms.items()})

    def __mul__(self, s):
        s = complex(s)
        return self._new({k: s * c for k, c in self.terms.items()})

    __rmul__ = __mul__

    def __repr__(self) -> str:
        return f"FormalElement(d={self.d}, order={self.order}, terms={len(self.terms)}, deg_max={self.deg_max})"

    def to_json(self) -> list:
        """Terms at u0 as sorted records (r, z, w, re, im)."""
        out = []
        for k in sorted(self.terms):
            v = complex(self.terms[k][..., 0])
            out.append({"v": k[0], "z": list(k[1]), "e": list(k[2]), "re": v.real, "im": v.imag})
        return out


def _collect(d: int, order: int, keys: list, coefs: np.ndarray, deg_max: int, truncated: bool) -> FormalElement:
    """Sum coefficient rows with equal keys."""
    if not keys:
        return FormalElement(d, order, {}, deg_max, truncated)
    uniq: dict[Key, int] = {}
    idx = np.array([uniq.setdefault(k, len(uniq)) for k in keys])
    acc = np.zeros((len(uniq), coefs.shape[-1]), dtype=complex)
    np.add.at(acc, idx, coefs)
    inv_keys = list(uniq)
    return FormalElement(d, order, {inv_keys[i]: acc[i] for i in range(len(inv_keys))}, deg_max, truncated)


def random_element(
    d: int,
    rng: np.random.Generator,
    order: int = 0,
    max_deg: int = 3,
    form_degrees: Sequence[int] = (0, 1, 2),
    n_terms: int = 6,
    deg_max: int = DEG_MAX,
    complex_coefficients: bool = True,
) -> FormalElement:
    """Random element with ``Deg <= max_deg`` and Taylor coefficients of the given order."""
    terms: dict[Key, np.ndarray] = {}
    n = tables(d, order).n
    for _ in range(n_terms):
        D = int(rng.integers(0, max_deg + 1))
        r = int(rng.integers(0, D // 2 + 1))
        s = D - 2 * r
        e = _exponents(d, s)[int(rng.integers(len(_exponents(d, s))))]
        q = int(rng.choice(list(form_degrees)))
        w = tuple(sorted(rng.choice(d, size=min(q, d), replace=False).tolist()))
        c = rng.normal(size=n) + (1j * rng.normal(size=n) if complex_coefficients else 0.0)
        terms[(r, e, w)] = terms.get((r, e, w), 0) + c
    return FormalElement(d, order, terms, deg_max)


# ---------------------------------------------------------------------------
# context


@dataclass
class FedosovContext:
    """Fixed-point data at u0: Taylor arrays (coefficient axis last) of the frame geometry.

    ``theta[a, b] = theta_ab`` and ``g[a, b]`` in the N-adapted frame, ``Gamma[c, a, b]``
    (package convention), ``N[a, i]``; derived: ``W`` (anholonomy), ``T``
    (torsion), ``R`` (curvature, ``R[a, b, c, d] = R(e_d, e_c) e_b`` components),
    ``theta_up``, ``g_up`` and ``Lam = theta_up - i g_up``.
    """

    n: int
    m: int
    theta: np.ndarray
    g: np.ndarray
    Gamma: np.ndarray
    N: np.ndarray
    W: np.ndarray
    T: np.ndarray
    R: np.ndarray
    theta_up: np.ndarray
    g_up: np.ndarray
    Lam: np.ndarray
    deg_max: int = DEG_MAX
    label: str = ""
    point: np.ndarray | None = None
    _S: dict = field(default_factory=dict, repr=False)

    @property
    def d(self) -> int:
        return self.n + self.m

    @property
    def order(self) -> int:
        """Taylor order of the connection coefficients."""
        return _order(self.Gamma, self.d)

    # construction -----------------------------------------------------------------
    @classmethod
    def from_jets(cls, theta: Jet, g: Jet, Gamma: Jet, N: Jet, n: int, m: int, deg_max: int = DEG_MAX, label: str = "") -> "FedosovContext":
        """Build from jets at a single point (trailing batch axis of length 1 or none)."""
        batch = theta.shape[2:]
        D = lambda X, ax: X.d_(ax)  # noqa: E731
        W, _ = anholonomy_from(N, D, n, m, batch)
        T = torsion_from(Gamma, W)
        R = riemann_from(Gamma, W, N, D, n, m)
        th_inv = inv(theta)
        theta_up = einsum("ab...->ba...", th_inv)  # theta^{ab} theta_{ac} = delta^b_c
        g_up = inv(g)
        tu, gu = _taylor(theta_up), _taylor(g_up)
        K = min(_order(tu, n + m), _order(gu, n + m))
        Lam = _trunc(tu, n + m, K) - 1j * _trunc(gu, n + m, K)
        return cls(n, m, _taylor(theta), _taylor(g), _taylor(Gamma), _taylor(N), _taylor(W), _taylor(T), _taylor(R), tu, gu, Lam, deg_max, label)

    @classmethod
    def flat(cls, theta, g, n: int, m: int, order: int = 4, deg_max: int = DEG_MAX) -> "FedosovContext":
        """Constant theta, g; vanishing connection and N-connection."""
        d = n + m
        point = np.zeros((d, 1))
        th = Jet.constant(np.asarray(theta, float)[..., None] * np.ones(1), d, order + 1)
        gg = Jet.constant(np.asarray(g, float)[..., None] * np.ones(1), d, order + 1)
        Gam = Jet.constant(np.zeros((d, d, d, 1)), d, order + 1)
        Nj = Jet.constant(np.zeros((m, n, 1)), d, order + 1)
        del point
        return cls.from_jets(th, gg, Gam, Nj, n, m, deg_max, "flat")

    # structure checks ----------------------------------------------------------------
    def adapted(self, c: np.ndarray, mu: int) -> np.ndarray:
        """e_mu applied to a Taylor array (order drops by one)."""
        d, n = self.d, self.n
        out = _tderiv(c, d, mu)
        if mu < n:
            for a in range(self.m):
                out = out - _tmul(self.N[a, mu], _tderiv(c, d, n + a), d)
        return out

    def compatibility(self) -> tuple[float, float]:
        """Max |D theta| and |D g| over the retained Taylor coefficients."""
        d = self.d
        out = []
        for M in (self.theta, self.g):
            worst = 0.0
            for mu in range(d):
                G = self.Gamma[:, :, mu]  # [c, a]
                dM = np.stack([np.stack([self.adapted(M[a, b], mu) for b in range(d)]) for a in range(d)])
                t1 = _tmul(G[:, :, None], M[:, None, :], d).sum(axis=0)  # Gamma^c_a M_cb
                t2 = _tmul(M[:, :, None], G[None, :, :], d).sum(axis=1)  # M_ac Gamma^c_b
                K = min(_order(dM, d), _order(t1, d))
                res = _trunc(dM, d, K) - _trunc(t1, d, K) - _trunc(t2, d, K)
                worst = max(worst, float(np.max(np.abs(res))))
            out.append(worst)
        return out[0], out[1]

    def contraction_table(self, k: int) -> dict:
        """``S_k(pa, pb)`` = (i/2)^k / k! * sum over ordered index tuples of prod Lambda^{a_i b_i}."""
        if k in self._S:
            return self._S[k]
        d = self.d
        if k == 0:
            self._S[0] = {((0,) * d, (0,) * d): _const_taylor(1.0, d, _order(self.Lam, d))}
            return self._S[0]
        tup = list(itertools.product(range(d), repeat=k))
        A = np.array(tup)
        P = self.Lam[A[:, 0][:, None], A[:, 0][None, :]]
        for j in range(1, k):
            P = _tmul(P, self.Lam[A[:, j][:, None], A[:, j][None, :]], d)
        ex = [tuple(np.bincount(t, minlength=d)) for t in tup]
        table: dict = {}
        pref = (0.5j) ** k / math.factorial(k)
        for i, ea in enumerate(ex):
            for j, eb in enumerate(ex):
                key = (ea, eb)
                table[key] = table.get(key, 0) + pref * P[i, j]
        self._S[k] = table
        return table


# ---------------------------------------------------------------------------
# Wick product and commutators


def wick_product(a: FormalElement, b: FormalElement, ctx: FedosovContext, strict: bool = False) -> FormalElement:
    """Fibrewise Wick product with exterior multiplication of the form parts."""
    d = a.d
    deg_max = min(a.deg_max, b.deg_max, ctx.deg_max)
    K = min(a.order, b.order, _order(ctx.Lam, d))
    keys: list = []
    rows_s: list = []
    rows_a: list = []
    rows_b: list = []
    facs: list = []
    truncated = a.truncated or b.truncated
    a_items = list(a.terms.items())
    b_items = list(b.terms.items())
    S_tabs: dict = {}
    S_list: list = []
    S_index: dict = {}
    for ia, ((ra, ea, wa), _) in enumerate(a_items):
        Da = 2 * ra + sum(ea)
        for ib, ((rb, eb, wb), _) in enumerate(b_items):
            if Da + 2 * rb + sum(eb) > deg_max:
                truncated = True
                continue
            sign, w = _merge(wa, wb)
            if sign == 0:
                continue
            for k in range(0, min(sum(ea), sum(eb)) + 1):
                if k not in S_tabs:
                    S_tabs[k] = ctx.contraction_table(k)
                tab = S_tabs[k]
                for pa, ra_e, fa in _sub_exponents(ea, k):
                    for pb, rb_e, fb in _sub_exponents(eb, k):
                        sk = (pa, pb)
                        if sk not in tab:
                            continue
                        if sk not in S_index:
                            S_index[sk] = len(S_list)
                            S_list.append(_trunc(tab[sk], d, K))
                        keys.append((ra + rb + k, _add(ra_e, rb_e), w))
                        rows_s.append(S_index[sk])
                        rows_a.append(ia)
                        rows_b.append(ib)
                        facs.append(sign * fa * fb)
    if truncated and strict:
        raise TruncationOverflow(f"product needs Deg > {deg_max}")
    if not keys:
        return FormalElement(d, K, {}, deg_max, truncated)
    Ca = np.stack([_trunc(c, d, K) for _, c in a_items])
    Cb = np.stack([_trunc(c, d, K) for _, c in b_items])
    Sarr = np.stack(S_list)
    coefs = _tmul(_tmul(Sarr[rows_s], Ca[rows_a], d), Cb[rows_b], d) * np.asarray(facs)[:, None]
    return _collect(d, K, keys, coefs, deg_max, truncated)


def _split_form_degree(a: FormalElement) -> dict[int, FormalElement]:
    out: dict[int, dict] = {}
    for k, c in a.terms.items():
        out.setdefault(len(k[2]), {})[k] = c
    return {q: a._new(t) for q, t in out.items()}


def graded_commutator(a: FormalElement, b: FormalElement, ctx: FedosovContext) -> FormalElement:
    """``[a, b] = a o b - (-1)^{deg_a(a) deg_a(b)} b o a`` extended bilinearly."""
    out = FormalElement.zero(a.d, min(a.order, b.order), min(a.deg_max, b.deg_max))
    for qa, A in _split_form_degree(a).items():
        for qb, B in _split_form_degree(b).items():
            out = out + wick_product(A, B, ctx) - ((-1) ** (qa * qb)) * wick_product(B, A, ctx)
    return out


def _divide_v(a: FormalElement, scale: float) -> FormalElement:
    out = {}
    for (r, e, w), c in a.terms.items():
        if r == 0:
            if np.max(np.abs(c)) > _DIV_V_TOL * max(scale, 1.0):
                raise ArithmeticError("commutator has a v^0 part; cannot divide by v")
            continue
        out[(r - 1, e, w)] = c
    return a._new(out)


def ad_over_v(x: FormalElement, a: FormalElement, ctx: FedosovContext) -> FormalElement:
    """``(i / v) ad_Wick(x)(a)``."""
    c = graded_commutator(x, a, ctx)
    return 1j * _divide_v(c, x.norm() * a.norm())


# ---------------------------------------------------------------------------
# delta operators


def delta(a: FormalElement) -> FormalElement:
    """``delta a = e^alpha ^ d a / d z^alpha``."""
    d = a.d
    out: dict = {}
    for (r, e, w), c in a.terms.items():
        for al in range(d):
            if e[al] == 0:
                continue
            sign, ww = _merge((al,), w)
            if sign == 0:
                continue
            ne = list(e)
            ne[al] -= 1
            key = (r, tuple(ne), ww)
            val = (sign * e[al]) * c
            out[key] = out[key] + val if key in out else val
    return a._new(out)


def delta_inverse(a: FormalElement, normalization: str = "standard") -> FormalElement:
    """``delta^{-1} a = z^alpha i_alpha(a) / (p + q)`` on (p, q)-bihomogeneous parts, 0 for p = q = 0.

    ``normalization="printed"`` multiplies by i (that variant violates the
    Hodge decomposition and is kept only for comparison).
    """
    d = a.d
    fac = 1j if normalization == "printed" else 1.0
    out: dict = {}
    for (r, e, w), c in a.terms.items():
        p, q = sum(e), len(w)
        if p + q == 0 or q == 0:
            continue
        for pos, al in enumerate(w):
            ww = w[:pos] + w[pos + 1 :]
            ne = list(e)
            ne[al] += 1
            key = (r, tuple(ne), ww)
            val = (fac * (-1) ** pos / (p + q)) * c
            out[key] = out[key] + val if key in out else val
    return a._new(out)


def sigma(a: FormalElement) -> FormalElement:
    """Projection on the part with deg_s = deg_a = 0."""
    return a.select(lambda r, s, q, D: s == 0 and q == 0)


def delta_ops(a: FormalElement) -> tuple[FormalElement, FormalElement]:
    return delta(a), delta_inverse(a)


# ---------------------------------------------------------------------------
# extended d-connection


def extend_D(a: FormalElement, ctx: FedosovContext) -> FormalElement:
    """Extension of the d-connection to W (x) Lambda (a deg_a-graded derivation)."""
    d = a.d
    K = min(a.order - 1, ctx.order, _order(ctx.W, d))
    if K < 0:
        raise OrderError("Taylor order exhausted; evaluate with a higher context/element order")
    keys: list = []
    vals: list = []

    def put(key, val):
        keys.append(key)
        vals.append(_trunc(val, d, K))

    for (r, e, w), c in a.terms.items():
        for mu in range(d):
            sign, ww = _merge((mu,), w)
            if sign == 0:
                continue
            put((r, e, ww), sign * ctx.adapted(c, mu))
            for g_ in range(d):
                if e[g_] == 0:
                    continue
                for b in range(d):
                    ne = list(e)
                    ne[g_] -= 1
                    ne[b] += 1
                    put((r, tuple(ne), ww), (-sign * e[g_]) * _tmul(ctx.Gamma[g_, b, mu], c, d))
        # d of the coframe factors: d e^g = -sum_{a<b} W^g_ab e^a ^ e^b
        for pos, g_ in enumerate(w):
            for al in range(d):
                for be in range(al + 1, d):
                    seq = list(w[:pos]) + [al, be] + list(w[pos + 1 :])
                    sign, ww = _canon(seq)
                    if sign == 0:
                        continue
                    put((r, e, ww), (-sign * (-1) ** pos) * _tmul(ctx.W[g_, al, be], c, d))
    if not keys:
        return FormalElement(d, K, {}, a.deg_max, a.truncated)
    return _collect(d, K, keys, np.stack(vals), a.deg_max, a.truncated)


def torsion_element(ctx: FedosovContext) -> FormalElement:
    """``zT = 1/2 z^g theta_{g t} T^t_{ab} e^a ^ e^b`` (deg_s = 1, deg_a = 2)."""
    d = ctx.d
    thT = _tmul(ctx.theta[:, :, None, None], ctx.T[None], d).sum(axis=1)  # [g, a, b]
    terms = {}
    for g_ in range(d):
        for a in range(d):
            for b in range(a + 1, d):
                terms[(0, _unit(d, g_), (a, b))] = thT[g_, a, b]
    K = _order(thT, d)
    return FormalElement(d, K, terms, ctx.deg_max)


def curvature_element(ctx: FedosovContext) -> FormalElement:
    """``zR = 1/4 z^g z^f theta_{g t} R^t_{f ab} e^a ^ e^b`` (deg_s = 2, deg_a = 2)."""
    d = ctx.d
    thR = _tmul(ctx.theta[:, :, None, None, None], ctx.R[None], d).sum(axis=1)  # [g, f, a, b]
    K = _order(thR, d)
    terms: dict = {}
    for g_ in range(d):
        for f in range(d):
            e = _add(_unit(d, g_), _unit(d, f))
            for a in range(d):
                for b in range(a + 1, d):
                    key = (0, e, (a, b))
                    val = 0.5 * thR[g_, f, a, b]
                    terms[key] = terms[key] + val if key in terms else val
    return FormalElement(d, K, terms, ctx.deg_max)


# ---------------------------------------------------------------------------
# flat Fedosov connection and star product


@dataclass
class FedosovResult:
    """``r`` with its Deg-homogeneous components and the consistency residuals."""

    r: FormalElement
    components: dict[int, FormalElement]
    delta_inverse_residual: float
    equation_residual: float


def recursion_r(ctx: FedosovContext, deg_max: int | None = None, pairing: str = "balanced") -> FedosovResult:
    """Solve ``delta r = T + R + D r - (i/v) r o r`` with ``delta^{-1} r = 0`` degree by degree.

    ``pairing="balanced"`` sums r^(l+2) o r^(k-l+2) (Deg-homogeneous); ``"printed"``
    uses r^(l+2) o r^(l+2) for comparison.
    """
    Dm = ctx.deg_max if deg_max is None else deg_max
    if Dm < 3:
        raise ValueError("deg_max must be >= 3")
    d = ctx.d
    T = torsion_element(ctx)
    T.deg_max = Dm
    R = curvature_element(ctx)
    R.deg_max = Dm
    comp: dict[int, FormalElement] = {}
    comp[2] = delta_inverse(T)
    if Dm >= 3:
        rhs = R + extend_D(comp[2], ctx) - _i_over_v(wick_product(comp[2], comp[2], ctx))
        comp[3] = delta_inverse(rhs.Deg(2)).Deg(3)
    for k in range(1, Dm - 2):
        P = FormalElement.zero(d, ctx.order, Dm)
        for l_ in range(0, k + 1):
            other = comp[k - l_ + 2] if pairing == "balanced" else comp[l_ + 2]
            P = P + wick_product(comp[l_ + 2], other, ctx)
        rhs = extend_D(comp[k + 2], ctx) - _i_over_v(P)
        comp[k + 3] = delta_inverse(rhs.Deg(k + 2)).Deg(k + 3)
    r = FormalElement.zero(d, min(c.order for c in comp.values()), Dm)
    for c in comp.values():
        r = r + c
    r.deg_max = Dm
    # consistency: delta^{-1} r = 0 and the defining equation below Deg_max - 1
    dinv = delta_inverse(r).norm()
    lhs = delta(r)
    rhs = T + R + extend_D(r, ctx) - ad_half(r, r, ctx)
    eq = (lhs - rhs).select(lambda rr, s, q, D: D <= Dm - 2).norm()
    return FedosovResult(r, comp, dinv, eq)


def ad_half(x: FormalElement, y: FormalElement, ctx: FedosovContext) -> FormalElement:
    """``(i / v) x o y`` (division by v checked)."""
    return _i_over_v(wick_product(x, y, ctx))


def _i_over_v(p: FormalElement) -> FormalElement:
    return 1j * _divide_v(p, max(p.norm(), 1.0))


def fedosov_D(a: FormalElement, ctx: FedosovContext, r: FormalElement) -> FormalElement:
    """``D_F a = -delta a + D a - (i/v) ad_Wick(r)(a)``."""
    return -delta(a) + extend_D(a, ctx) - ad_over_v(r, a, ctx)


def flatness_residual(ctx: FedosovContext, r: FormalElement, a: FormalElement) -> float:
    """Max |D_F^2 a| over components unaffected by truncation (Deg <= deg_max - 3)."""
    Dm = min(r.deg_max, ctx.deg_max)
    out = fedosov_D(fedosov_D(a, ctx, r), ctx, r)
    return out.select(lambda rr, s, q, D: D <= Dm - 3).norm()


def tau_map(f: FormalElement, ctx: FedosovContext, r_components: Mapping[int, FormalElement], max_deg: int) -> FormalElement:
    """Flat section with sigma(tau(f)) = f, built Deg by Deg."""
    parts = {0: f}
    for k in range(0, max_deg):
        rhs = extend_D(parts[k], ctx)
        for l_ in range(0, k + 1):
            if (l_ + 2) in r_components:
                rhs = rhs - ad_over_v(r_components[l_ + 2], parts[k - l_], ctx)
        parts[k + 1] = delta_inverse(rhs.Deg(k)).Deg(k + 1)
    out = parts[0]
    for k in range(1, max_deg + 1):
        out = out + parts[k]
    return out


@dataclass
class StarCoefficients:
    """``f * g = sum_k C_k v^k`` at u0 (complex), plus the products sigma(tau f o tau g)."""

    C: list[complex]

    def to_dict(self) -> dict:
        return {f"C{k}": [c.real, c.imag] for k, c in enumerate(self.C)}


def _field_taylor(f, ctx: FedosovContext, point, order: int) -> np.ndarray:
    if isinstance(f, ScalarField):
        if point is None:
            point = ctx.point
        if point is None:
            raise ValueError("a base point is required for field arguments")
        p = np.asarray(point, float).reshape(ctx.d, 1)
        return _taylor(f.jet(p, order))
    return np.asarray(f, dtype=complex)


def fedosov_star(f, g, ctx: FedosovContext, point=None, v_order: int = 2, r: FedosovResult | None = None) -> StarCoefficients:
    """Coefficients C_0..C_{v_order} of ``f * g = sigma(tau(f) o tau(g))`` at u0.

    ``f``, ``g`` are ScalarFields (jets taken at ``point`` to order 2 v_order,
    within the engine cap) or Taylor arrays at u0.
    """
    if not 0 <= v_order <= V_ORDER_CAP:
        raise OrderError(f"v_order must be in [0, {V_ORDER_CAP}]")
    need = 2 * v_order
    if r is None:
        r = recursion_r(ctx, max(ctx.deg_max, need + 1))
    fa = FormalElement.scalar(_field_taylor(f, ctx, point, need), ctx.d, need)
    ga = FormalElement.scalar(_field_taylor(g, ctx, point, need), ctx.d, need)
    tf = tau_map(fa, ctx, r.components, need)
    tg = tau_map(ga, ctx, r.components, need)
    prod = sigma(wick_product(tf, tg, ctx))
    C = []
    for k in range(v_order + 1):
        key = (k, (0,) * ctx.d, ())
        C.append(complex(prod.terms[key][..., 0]) if key in prod.terms else 0j)
    return StarCoefficients(C)


# ---------------------------------------------------------------------------
# contexts


def kahler_context(n: int = 1, order: int = 6, seed: int = 0, scale: float = 0.3, N_scale: float = 0.2, deg_max: int = DEG_MAX, point=None) -> FedosovContext:
    """Constant Kahler pair with a random polynomial u(n)-valued connection and polynomial N.

    theta = J_std, g = I in the adapted frame; ``Gamma_mu`` is antisymmetric and
    commutes with J at every u, so D theta = D g = 0 exactly; N^a_i is a random
    quadratic polynomial, so the frame is nonholonomic.
    """
    d = 2 * n
    rng = np.random.default_rng(seed)
    K = order + 1
    pts = np.zeros((d, 1)) if point is None else np.asarray(point, float).reshape(d, 1)
    u = [Jet.variable(pts[k], k, d, K) for k in range(d)]

    def poly(deg: int, s: float) -> Jet:
        out = Jet.constant(np.full(1, s * rng.normal()), d, K)
        for k in range(d):
            out = out + u[k] * (s * rng.normal())
        if deg >= 2:
            for k in range(d):
                for l_ in range(k, d):
                    out = out + u[k] * u[l_] * (s * rng.normal())
        return out

    zero = Jet.constant(np.zeros(1), d, K)
    Gam_rows = [[[zero for _ in range(d)] for _ in range(d)] for _ in range(d)]  # [c][a][mu]
    for mu in range(d):
        X = [[zero] * n for _ in range(n)]
        Y = [[zero] * n for _ in range(n)]
        for i in range(n):
            Y[i][i] = poly(2, scale)
            for j in range(i + 1, n):
                X[i][j] = poly(2, scale)
                X[j][i] = -X[i][j]
                Y[i][j] = poly(2, scale)
                Y[j][i] = Y[i][j]
        for i in range(n):
            for j in range(n):
                Gam_rows[i][j][mu] = X[i][j]
                Gam_rows[i][n + j][mu] = -Y[i][j]
                Gam_rows[n + i][j][mu] = Y[i][j]
                Gam_rows[n + i][n + j][mu] = X[i][j]
    Gam = stack([stack([stack(Gam_rows[c][a], axis=0) for a in range(d)], axis=0) for c in range(d)], axis=0)
    Nj = stack([stack([poly(2, N_scale) for _ in range(n)], axis=0) for _ in range(n)], axis=0)
    J = np.zeros((d, d))
    J[:n, n:] = -np.eye(n)
    J[n:, :n] = np.eye(n)
    th = Jet.constant(J[..., None], d, K)
    gg = Jet.constant(np.eye(d)[..., None], d, K)
    ctx = FedosovContext.from_jets(th, gg, Gam, Nj, n, n, deg_max, "kahler")
    ctx.point = pts[:, 0]
    return ctx


def lagrange_context(model: LagrangianModel, point, order: int = 6, deg_max: int = DEG_MAX) -> FedosovContext:
    """Almost Kahler data of a regular Lagrangian at ``point``: normal d-connection, theta = J^T M, g = M.

    The Lagrangian is expanded to ``order + 4`` (beyond the general field cap; the
    expression engine itself has no order limit) so that Gamma has Taylor order ``order``.
    """
    n = model.n
    d = 2 * n
    p = np.asarray(point, float).reshape(d, 1)
    K = order + 4
    Lf = ScalarField(model.L.node, model.chart, smoothness=K)
    Lj = evaluate([Lf], p, K)[0]
    jt = lagrange_jets(Lj, p, n)
    D = lambda X, ax: X.d_(ax)  # noqa: E731
    Gam = normal_coefficients(jt.hess, jt.N, D, n, p.shape[1:])
    M = blockdiag(jt.hess, jt.hess, n, n, p.shape[1:])
    J = complex_structure(n)
    theta = einsum("ba,bc...->ac...", J, M)
    ctx = FedosovContext.from_jets(theta, M, Gam, jt.N, n, n, deg_max, "lagrange")
    ctx.point = p[:, 0]
    return ctx


# ---------------------------------------------------------------------------
# Moyal star product (N-elongated, constant bivector)


def _nested_adapted(F: Jet, Nj: Jet | None, n: int, m: int, k: int) -> dict:
    """``{(a1..aj): e_a1 ... e_aj F}`` for j <= k (jets)."""
    D = lambda X, ax: X.d_(ax)  # noqa: E731
    out = {(): F}
    frontier = {(): F}
    for _ in range(k):
        nxt = {}
        for t, X in frontier.items():
            if Nj is None:
                ders = [X.d_(a) for a in range(n + m)]
            else:
                ders = adapted_derivatives(X, Nj, D, n, m)
            for a, Y in enumerate(ders):
                nxt[(a,) + t] = Y
        out.update(nxt)
        frontier = nxt
    return out


def _moyal_terms(Fd: dict, Gd: dict, theta: np.ndarray, order: int, d: int) -> list:
    """Per-order bidifferential terms (jets with complex coefficients)."""
    terms = []
    for k in range(order + 1):
        acc = None
        for A in itertools.product(range(d), repeat=k):
            for B in itertools.product(range(d), repeat=k):
                w = complex(np.prod([theta[a, b] for a, b in zip(A, B)])) if k else 1.0
                if w == 0:
                    continue
                t = Fd[A] * Gd[B]
                t = Jet(t.c * w, t.d, t.K)
                acc = t if acc is None else acc + t
        pref = (0.5j) ** k / math.factorial(k)
        if acc is None:
            acc = Jet(np.zeros_like(Fd[()].truncate(Fd[()].K - order).c, dtype=complex), d, Fd[()].K - order)
        terms.append(Jet(acc.c * pref, acc.d, acc.K))
    return terms


def moyal_star_jet(F: Jet, G: Jet, theta: np.ndarray, Nj: Jet | None, n: int, m: int, order: int) -> Jet:
    """Star product of jets (complex coefficients allowed); result order drops by ``order``."""
    Fd = _nested_adapted(F, Nj, n, m, order)
    Gd = _nested_adapted(G, Nj, n, m, order)
    terms = _moyal_terms(Fd, Gd, np.asarray(theta), order, n + m)
    K = min(t.K for t in terms)
    c = sum(t.truncate(K).c for t in terms)
    return Jet(c, F.d, K)


def moyal_star(f: ScalarField, g: ScalarField, theta, N: NConnection | None, order: int, point) -> tuple[float, float]:
    """``sum_k (1/k!)(i/2)^k theta^{a1b1}..theta^{akbk} (e_a1..e_ak f)(e_b1..e_bk g)`` at ``point``.

    ``theta`` is the (constant) bivector; a complex matrix (e.g. a Wick kernel
    Lambda) is accepted.  Returns (real, imaginary).
    """
    if not 0 <= order <= MOYAL_ORDER_CAP:
        raise OrderError(f"Moyal order must be in [0, {MOYAL_ORDER_CAP}]")
    ch = f.chart
    p = np.asarray(point, float).reshape(ch.dim, 1)
    F = f.jet(p, order)
    G = g.jet(p, order)
    Nj = None if N is None else N.jet(p, order)
    val = moyal_star_jet(F, G, np.asarray(theta), Nj, ch.dim_h, ch.dim_v, order).value[0]
    return float(np.real(val)), float(np.imag(val))


def moyal_terms(f: ScalarField, g: ScalarField, theta, N: NConnection | None, order: int, point) -> list[complex]:
    """Individual order-k contributions of :func:`moyal_star` at ``point``."""
    ch = f.chart
    p = np.asarray(point, float).reshape(ch.dim, 1)
    F, G = f.jet(p, order), g.jet(p, order)
    Nj = None if N is None else N.jet(p, order)
    Fd = _nested_adapted(F, Nj, ch.dim_h, ch.dim_v, order)
    Gd = _nested_adapted(G, Nj, ch.dim_h, ch.dim_v, order)
    return [complex(t.value[0]) for t in _moyal_terms(Fd, Gd, np.asarray(theta), order, ch.dim)]


def associativity_defect(f: ScalarField, g: ScalarField, h: ScalarField, theta, N: NConnection | None, order: int, point) -> float:
    """``|(f*g)*h - f*(g*h)|`` at ``point`` with the order-``order`` truncated product."""
    if not 0 <= order <= MOYAL_ORDER_CAP:
        raise OrderError(f"Moyal order must be in [0, {MOYAL_ORDER_CAP}]")
    ch = f.chart
    p = np.asarray(point, float).reshape(ch.dim, 1)
    K = 2 * order
    F, G, H = (_smooth(x, K).jet(p, K) for x in (f, g, h))
    Nj = None if N is None else evaluate([_smooth(x, K) for x in N.fields()], p, K)
    if Nj is not None:
        Nj = stack(Nj, axis=0).reshape(ch.dim_v, ch.dim_h, 1)
    n, m = ch.dim_h, ch.dim_v
    th = np.asarray(theta)
    left = moyal_star_jet(moyal_star_jet(F, G, th, Nj, n, m, order), H, th, Nj, n, m, order)
    right = moyal_star_jet(F, moyal_star_jet(G, H, th, Nj, n, m, order), th, Nj, n, m, order)
    return float(np.abs(left.value[0] - right.value[0]))


def _smooth(f: ScalarField, K: int) -> ScalarField:
    """Same field with jets allowed to order K (nested products need 2x the Moyal order)."""
    if f.smoothness >= K:
        return f
    return ScalarField(f.node, f.chart, K, f.domain, f.overrides, f.name)


def moyal_table(theta, order: int) -> dict:
    """Bidifferential coefficients keyed ``"k|pa|pb"`` (multi-index exponents) -> [re, im].

    ``f * g = sum c(k, pa, pb) d^pa f d^pb g`` with holonomic derivatives.
    """
    theta = np.asarray(theta)
    d = theta.shape[0]
    out: dict = {}
    for k in range(order + 1):
        pref = (0.5j) ** k / math.factorial(k)
        acc: dict = {}
        for A in itertools.product(range(d), repeat=k):
            for B in itertools.product(range(d), repeat=k):
                w = complex(np.prod([theta[a, b] for a, b in zip(A, B)])) if k else 1.0
                key = (tuple(np.bincount(A, minlength=d)) if k else (0,) * d, tuple(np.bincount(B, minlength=d)) if k else (0,) * d)
                acc[key] = acc.get(key, 0) + pref * w
        for (pa, pb), c in sorted(acc.items()):
            if c != 0:
                out[f"{k}|{','.join(map(str, pa))}|{','.join(map(str, pb))}"] = [c.real, c.imag]
    return out


def table_json(table: Mapping) -> str:
    return json.dumps(table, sort_keys=True, indent=1)
