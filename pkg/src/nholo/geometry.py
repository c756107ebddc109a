"""N-connections, N-adapted frames, anholonomy and d-metrics.

Index convention: horizontal coordinates come first (0..n-1), vertical ones
after (n..n+m-1).  Frame matrices are ``frame[alpha, mu] = e_alpha^mu`` so
that ``e_i = d_i - N^a_i d_a``; coframe matrices are stored transposed,
``coframe[mu, alpha] = e^alpha_mu``, which makes ``frame @ coframe = I`` and
keeps both matrices block upper-triangular.

The ``*_from_jets`` helpers are backend generic: they accept either
:class:`~nholo.fields.Jet` objects or plain numpy arrays together with a
derivative callback ``D(X, axis)``; tensor axes come first, batch axes last.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import SingularMetricError
from .fields import Chart, Jet, ScalarField, einsum, evaluate, inv, stack

Deriv = Callable[[object, int], object]

__all__ = [
    "NConnection",
    "FrameBasis",
    "AnholonomyData",
    "DMetric",
    "adapted_frames",
    "anholonomy",
    "to_offdiagonal",
    "as_points",
    "random_dmetric",
]


def _as_field(x, chart: Chart) -> ScalarField:
    if isinstance(x, ScalarField):
        return x
    if isinstance(x, str):
        return ScalarField.parse(x, chart)
    return ScalarField.constant(float(x), chart)


def as_points(point, d: int) -> tuple[np.ndarray, bool]:
    """Normalise ``point`` (shape (d,) or (npts, d)) to (d, npts); flag single points."""
    p = np.asarray(point, dtype=float)
    if p.ndim == 1:
        if p.shape[0] != d:
            raise ValueError(f"point must have {d} coordinates")
        return p.reshape(d, 1), True
    if p.ndim == 2 and p.shape[1] == d:
        return p.T.copy(), False
    raise ValueError(f"points must have shape ({d},) or (npts, {d})")


def _squeeze(a: np.ndarray, single: bool) -> np.ndarray:
    return a[..., 0] if single else np.moveaxis(a, -1, 0)


def zeros_batch(like, shape: tuple[int, ...], batch: tuple[int, ...]):
    if isinstance(like, Jet):
        return Jet.constant(np.zeros(shape + batch), like.d, like.K)
    return np.zeros(shape + batch)


# ---------------------------------------------------------------------------
# N-connection


class NConnection:
    """Coefficients ``N^a_i`` stored as ``coefficients[a][i]`` (dim_v x dim_h)."""

    def __init__(self, coefficients: Sequence[Sequence], chart: Chart):
        rows = [[_as_field(x, chart) for x in row] for row in coefficients]
        if len(rows) != chart.dim_v or any(len(r) != chart.dim_h for r in rows):
            raise ValueError("N-connection must be dim_v x dim_h")
        self.coefficients = rows
        self.chart = chart

    @classmethod
    def zero(cls, chart: Chart) -> "NConnection":
        z = ScalarField.constant(0.0, chart)
        return cls([[z] * chart.dim_h for _ in range(chart.dim_v)], chart)

    def fields(self) -> list[ScalarField]:
        return [f for row in self.coefficients for f in row]

    def jet(self, points, order: int) -> Jet:
        js = evaluate(self.fields(), points, order)
        return _reshape_jets(js, (self.chart.dim_v, self.chart.dim_h))


def _reshape_jets(js: list[Jet], shape: tuple[int, ...]) -> Jet:
    flat = stack(js, axis=0)
    return flat.reshape(shape + flat.shape[1:])


@dataclass
class FrameBasis:
    frame_matrix: np.ndarray
    coframe_matrix: np.ndarray


@dataclass
class AnholonomyData:
    """``W[g, a, b] = W^g_{ab}`` with ``[e_a, e_b] = W^g_{ab} e_g``; ``Omega[a, i, j]``."""

    W: np.ndarray
    Omega: np.ndarray


# ---------------------------------------------------------------------------
# backend-generic kernels


def frame_matrix_from(N, n: int, m: int, batch: tuple[int, ...]):
    """frame[alpha, mu] = e_alpha^mu (e_i = d_i - N^a_i d_a)."""
    F = zeros_batch(N, (n + m, n + m), batch)
    F[np.arange(n + m), np.arange(n + m)] = 1.0
    F[:n, n:] = -einsum("ai...->ia...", N)
    return F


def coframe_rows_from(N, n: int, m: int, batch: tuple[int, ...]):
    """E[alpha, mu] = e^alpha_mu (e^a = dy^a + N^a_i dx^i), rows indexed by alpha."""
    E = zeros_batch(N, (n + m, n + m), batch)
    idx = np.arange(n + m)
    E[idx, idx] = 1.0
    E[n:, :n] = N
    return E


def adapted_derivatives(X, N, D: Deriv, n: int, m: int) -> list:
    """``[e_alpha X for alpha]`` with e_i = d_i - N^a_i d_a and e_a = d_a."""
    dv = [D(X, n + a) for a in range(m)]
    out = []
    for i in range(n):
        t = D(X, i)
        for a in range(m):
            t = t - N[a, i] * dv[a]
        out.append(t)
    return out + dv


def anholonomy_from(N, D: Deriv, n: int, m: int, batch: tuple[int, ...]):
    """W^g_{ab} and Omega^a_{ij} = e_j N^a_i - e_i N^a_j."""
    eN = adapted_derivatives(N, N, D, n, m)  # eN[beta][a, i] = e_beta N^a_i
    like = eN[0]
    W = zeros_batch(like, (n + m,) * 3, batch)
    Om = zeros_batch(like, (m, n, n), batch)
    for i in range(n):
        for j in range(n):
            Om[:, i, j] = eN[j][:, i] - eN[i][:, j]
    W[n:, :n, :n] = Om
    for b in range(m):
        W[n:, :n, n + b] = eN[n + b]
        W[n:, n + b, :n] = -eN[n + b]
    return W, Om


def blockdiag(G, H, n: int, m: int, batch: tuple[int, ...]):
    M = zeros_batch(G, (n + m, n + m), batch)
    M[:n, :n] = G
    M[n:, n:] = H
    return M


# ---------------------------------------------------------------------------
# d-metric


class DMetric:
    """d-metric ``g_ij(u) dx^i dx^j + h_ab(u) e^a e^b`` with N-connection ``N``."""

    def __init__(self, g: Sequence[Sequence], h: Sequence[Sequence], N: NConnection | None, chart: Chart):
        n, m = chart.dim_h, chart.dim_v
        self.g = [[_as_field(x, chart) for x in row] for row in g]
        self.h = [[_as_field(x, chart) for x in row] for row in h]
        if len(self.g) != n or any(len(r) != n for r in self.g):
            raise ValueError("g must be dim_h x dim_h")
        if len(self.h) != m or any(len(r) != m for r in self.h):
            raise ValueError("h must be dim_v x dim_v")
        self.N = N if N is not None else NConnection.zero(chart)
        self.chart = chart

    @classmethod
    def diagonal(cls, g: Sequence, h: Sequence, N: NConnection | None, chart: Chart) -> "DMetric":
        z = ScalarField.constant(0.0, chart)
        gg = [[g[i] if i == j else z for j in range(len(g))] for i in range(len(g))]
        hh = [[h[a] if a == b else z for b in range(len(h))] for a in range(len(h))]
        return cls(gg, hh, N, chart)

    @property
    def n(self) -> int:
        return self.chart.dim_h

    @property
    def m(self) -> int:
        return self.chart.dim_v

    def fields(self) -> list[ScalarField]:
        return [f for row in self.g for f in row] + [f for row in self.h for f in row] + self.N.fields()

    def jets(self, points, order: int, quad_tol: float | None = None) -> tuple[Jet, Jet, Jet]:
        """Batched jets (G, H, N) of shapes (n,n,*b), (m,m,*b), (m,n,*b)."""
        n, m = self.n, self.m
        js = evaluate(self.fields(), points, order, quad_tol)
        G = _reshape_jets(js[: n * n], (n, n))
        H = _reshape_jets(js[n * n : n * n + m * m], (m, m))
        Nj = _reshape_jets(js[n * n + m * m :], (m, n))
        return G, H, Nj


def _check_invertible(G: np.ndarray, H: np.ndarray) -> None:
    dg = np.linalg.det(np.moveaxis(np.moveaxis(G, 0, -1), 0, -1))
    dh = np.linalg.det(np.moveaxis(np.moveaxis(H, 0, -1), 0, -1))
    if np.any(dg * dh == 0) or not np.all(np.isfinite(dg * dh)):
        raise SingularMetricError("d-metric block is singular at an evaluation point")


# ---------------------------------------------------------------------------
# point operations


def adapted_frames(N: NConnection, point) -> FrameBasis:
    """Frame ``e_alpha^mu`` and coframe ``e^alpha_mu`` (stored [mu, alpha]) at point(s)."""
    ch = N.chart
    p, single = as_points(point, ch.dim)
    Nv = N.jet(p, 0).value
    F = frame_matrix_from(Nv, ch.dim_h, ch.dim_v, p.shape[1:])
    E = coframe_rows_from(Nv, ch.dim_h, ch.dim_v, p.shape[1:])
    C = np.swapaxes(E, 0, 1)
    return FrameBasis(_squeeze(F, single), _squeeze(C, single))


def anholonomy(N: NConnection, point) -> AnholonomyData:
    ch = N.chart
    p, single = as_points(point, ch.dim)
    Nj = N.jet(p, 1)
    W, Om = anholonomy_from(Nj, lambda X, ax: X.d_(ax), ch.dim_h, ch.dim_v, p.shape[1:])
    return AnholonomyData(_squeeze(W.value, single), _squeeze(Om.value, single))


def offdiagonal_from(G, H, N, n: int, m: int, batch: tuple[int, ...]):
    """Coordinate metric E^T blockdiag(G, H) E with E the coframe rows."""
    E = coframe_rows_from(N, n, m, batch)
    M = blockdiag(G, H, n, m, batch)
    ME = einsum("ab...,bn...->an...", M, E)
    return einsum("am...,an...->mn...", E, ME)


def to_offdiagonal(m: DMetric, point) -> np.ndarray:
    """Off-diagonal coordinate-frame matrix of a d-metric at point(s)."""
    ch = m.chart
    p, single = as_points(point, ch.dim)
    G, H, Nj = (j.value for j in m.jets(p, 0))
    _check_invertible(G, H)
    out = offdiagonal_from(G, H, Nj, ch.dim_h, ch.dim_v, p.shape[1:])
    return _squeeze(out, single)


# ---------------------------------------------------------------------------
# random test metrics


def _random_expression(rng: np.random.Generator, names: Sequence[str], scale: float, terms: int = 3) -> str:
    out = []
    for _ in range(terms):
        c = rng.normal() * scale
        i, j = rng.integers(0, len(names), size=2)
        fn = "sin" if rng.random() < 0.5 else "cos"
        out.append(f"{c:.4f}*{fn}({rng.normal():.4f}*{names[i]}+{rng.normal():.4f}*{names[j]})")
    return "+".join(out)


def random_dmetric(rng: np.random.Generator, chart: Chart, scale: float = 0.3, n_scale: float = 0.5) -> DMetric:
    """Analytic d-metric: trigonometric perturbations of constant blocks (signs from the chart) and a random N."""
    names = chart.coordinate_names
    n, m = chart.dim_h, chart.dim_v
    sig = chart.signature
    base = [s * (1.5 + 0.5 * k) for k, s in enumerate(sig)]

    def block(offset: int, k: int):
        rows = [[None] * k for _ in range(k)]
        for i in range(k):
            rows[i][i] = f"{base[offset + i]:.4f}+{_random_expression(rng, names, scale)}"
            for j in range(i + 1, k):
                rows[i][j] = rows[j][i] = _random_expression(rng, names, scale * 0.5 / k)
        return [[ScalarField.parse(e, chart) for e in r] for r in rows]

    g = block(0, n)
    h = block(n, m)
    N = NConnection([[ScalarField.parse(_random_expression(rng, names, n_scale), chart) for _ in range(n)] for _ in range(m)], chart)
    return DMetric(g, h, N, chart)
