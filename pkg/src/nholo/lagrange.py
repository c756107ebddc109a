"""Effective-Lagrangian models of d-metrics.

A regular Lagrangian ``L(x, y)`` on a chart with ``dim_h == dim_v == n``
(vertical coordinate ``y^i`` paired with ``dx^i/dtau``) defines

* the Hessian v-metric ``h_ab = 1/2 d^2 L / dy^a dy^b``;
* the canonical semispray ``G^a = 1/4 h^{ai} (d^2L/dy^i dx^k y^k - dL/dx^i)``;
* the canonical N-connection ``N^a_i = dG^a / dy^i``;
* the almost complex structure ``J(e_i) = -e_{n+i}``, ``J(e_{n+i}) = e_i`` and
  the almost symplectic form ``theta(X, Y) = g(JX, Y)``, equal to ``d omega``
  with ``omega = 1/2 dL/dy^i dx^i``;
* the normal d-connection (same coefficients on both blocks), its torsion,
  curvature and the Chern-Weyl 2-form ``-1/4 tr(J R)``.

All quantities are obtained from a single jet of ``L`` (order 4 for
curvature), so derivatives of ``N`` and of the metric are exact up to
round-off.  Arrays follow :mod:`nholo.connections`: ``Gamma[c, a, b]`` with
``D_{e_b} e_a = Gamma^c_{ab} e_c``; ``R[a, b, c, d]`` are the components of
``R(e_d, e_c) e_b``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .connections import (
    NORMAL,
    _jd,
    compatibility_from,
    contorsion,
    levi_civita_adapted,
    normal_coefficients,
    riemann_from,
    torsion_from,
)
from .errors import DegenerateHessianError, DomainError, IntegrationError, OrderError
from .fields import Chart, Jet, ScalarField, einsum, inv, stack, tables
from .geometry import (
    _squeeze,
    anholonomy_from,
    as_points,
    blockdiag,
    coframe_rows_from,
    frame_matrix_from,
    offdiagonal_from,
)

__all__ = [
    "LagrangianModel",
    "LagrangeJets",
    "AlmostStructure",
    "NormalConnectionData",
    "Trajectory",
    "GeodesicComparison",
    "hessian_metric",
    "semispray",
    "canonical_nconnection",
    "geodesic_compare",
    "almost_symplectic",
    "normal_dconnection",
    "chern_weyl",
    "chern_weyl_form",
    "lc_distortion",
    "assembled_dmetric",
    "complex_structure",
    "exterior_derivative_2form",
    "cartan_torsion",
    "energy",
    "lagrangian_along",
    "rk4",
    "spray_trajectory",
    "convergence_slope",
]

#: relative conditioning bound for a regular Hessian
HESSIAN_COND = 1e12


# ---------------------------------------------------------------------------
# model and jets


@dataclass
class LagrangeJets:
    """Batched jets: ``L`` (order K), ``Ly[i]`` (K-1), ``hess`` (K-2), ``G`` (K-2), ``N[a, i]`` (K-3).

    ``N`` is ``None`` when the L jet has order 2.
    """

    L: Jet
    Ly: Jet
    hess: Jet
    G: Jet
    N: Jet | None


class LagrangianModel:
    """A regular Lagrangian ``L(x, y)`` on a chart with equal h- and v-dimensions."""

    def __init__(self, L: ScalarField | str, chart: Chart | None = None, params=None):
        if isinstance(L, str):
            if chart is None:
                raise ValueError("a chart is required to parse a Lagrangian expression")
            L = ScalarField.parse(L, chart, params)
        if L.chart.dim_h != L.chart.dim_v:
            raise ValueError("Lagrange models need dim_h == dim_v")
        self.L = L
        self.chart = L.chart

    @property
    def n(self) -> int:
        return self.chart.dim_h

    @classmethod
    def quadratic(cls, g: Sequence[Sequence], chart: Chart) -> "LagrangianModel":
        """``L = g_ij(x) y^i y^j`` for a symmetric x-dependent matrix ``g``."""
        n = chart.dim_h
        y = [ScalarField.coordinate(n + i, chart) for i in range(n)]
        L = ScalarField.constant(0.0, chart)
        for i in range(n):
            for j in range(n):
                gij = g[i][j]
                if isinstance(gij, str):
                    gij = ScalarField.parse(gij, chart)
                elif not isinstance(gij, ScalarField):
                    gij = ScalarField.constant(float(gij), chart)
                L = L + gij * y[i] * y[j]
        return cls(L, chart)

    def jets(self, points: np.ndarray, order: int = 4) -> LagrangeJets:
        """Jets at (d, *batch) points; ``order`` is the order of the L jet (>= 2)."""
        if order < 2:
            raise OrderError("the semispray needs the Lagrangian to order 2")
        if self.L.smoothness < order:
            raise OrderError(f"Lagrangian smoothness {self.L.smoothness} < required order {order}")
        p = np.asarray(points, dtype=float)
        return lagrange_jets(self.L.jet(p, order), p, self.n)


def lagrange_jets(Lj: Jet, points: np.ndarray, n: int) -> LagrangeJets:
    """Hessian metric, semispray and canonical N-connection from a jet of ``L``."""
    Ly = stack([Lj.d_(n + i) for i in range(n)], axis=0)
    hess = 0.5 * stack([Ly.d_(n + b) for b in range(n)], axis=1)
    _check_regular(hess.value)
    y = [Jet.variable(points[n + k], n + k, Lj.d, Lj.K) for k in range(n)]
    # B_i = d^2 L / dy^i dx^k y^k - dL/dx^i
    B = -stack([Lj.d_(k) for k in range(n)], axis=0)
    for k in range(n):
        B = B + Ly.d_(k) * y[k]
    G = 0.25 * einsum("ai...,i...->a...", inv(hess), B)
    N = stack([G.d_(n + i) for i in range(n)], axis=1) if G.K >= 1 else None
    return LagrangeJets(Lj, Ly, hess, G, N)


def _check_regular(h: np.ndarray) -> None:
    hm = np.moveaxis(np.moveaxis(h, 0, -1), 0, -1)
    if not np.all(np.isfinite(hm)):
        raise DegenerateHessianError("non-finite v-Hessian")
    c = np.linalg.cond(hm)
    if np.any(~np.isfinite(c)) or np.any(c > HESSIAN_COND):
        raise DegenerateHessianError("v-Hessian of the Lagrangian is degenerate at a sample point")


def complex_structure(n: int) -> np.ndarray:
    """``J[alpha, beta]`` with ``J e_i = -e_{n+i}`` and ``J e_{n+i} = e_i`` (adapted basis)."""
    J = np.zeros((2 * n, 2 * n))
    i = np.arange(n)
    J[n + i, i] = -1.0
    J[i, n + i] = 1.0
    return J


# ---------------------------------------------------------------------------
# point operations


def _at(model: LagrangianModel, point, order: int):
    p, single = as_points(point, model.chart.dim)
    return model.jets(p, order), p, single


def hessian_metric(model: LagrangianModel, point) -> np.ndarray:
    """``h_ab = 1/2 d^2L/dy^a dy^b``; shape (n, n) or (npts, n, n)."""
    J, _, single = _at(model, point, 2)
    return _squeeze(J.hess.value, single)


def semispray(model: LagrangianModel, point) -> np.ndarray:
    """Canonical semispray coefficients ``G^a``; shape (n,) or (npts, n)."""
    J, _, single = _at(model, point, 2)
    return _squeeze(J.G.value, single)


def canonical_nconnection(model: LagrangianModel, point) -> np.ndarray:
    """``N[a, i] = dG^a/dy^i``; shape (n, n) or (npts, n, n)."""
    J, _, single = _at(model, point, 3)
    return _squeeze(J.N.value, single)


def assembled_dmetric(model: LagrangianModel, point) -> tuple[np.ndarray, np.ndarray]:
    """The d-metric ``g_ij dx^i dx^j + g_ij e^{n+i} e^{n+j}`` (g = Hessian).

    Returns the block-diagonal matrix in the N-adapted basis and the
    off-diagonal coordinate matrix.
    """
    J, p, single = _at(model, point, 3)
    n, batch = model.n, p.shape[1:]
    g, N = J.hess.value, J.N.value
    M = blockdiag(g, g, n, n, batch)
    return _squeeze(M, single), _squeeze(offdiagonal_from(g, g, N, n, n, batch), single)


# ---------------------------------------------------------------------------
# almost Kaehler structure


@dataclass
class AlmostStructure:
    """``J`` and ``theta`` in the adapted basis; ``theta_coord`` and ``omega`` in coordinates.

    ``d_theta[l, m, k]`` are the coefficients of ``d theta`` (all index triples),
    ``theta_minus_domega`` is ``theta_coord - d omega``.  Batch axes lead.
    """

    J: np.ndarray
    theta: np.ndarray
    theta_coord: np.ndarray
    omega: np.ndarray
    d_theta: np.ndarray
    theta_minus_domega: np.ndarray

    @property
    def closedness_residual(self) -> float:
        return float(np.max(np.abs(self.d_theta)))

    @property
    def exactness_residual(self) -> float:
        return float(np.max(np.abs(self.theta_minus_domega)))


def exterior_derivative_2form(theta: Jet) -> np.ndarray:
    """``(d theta)_{lmk} = d_l theta_mk + d_m theta_kl + d_k theta_lm`` from a 2-form jet."""
    d = theta.shape[0]
    Dv = np.stack([theta.d_(l).value for l in range(d)], axis=0)  # Dv[l, m, k] = d_l theta_mk
    return Dv + np.einsum("mkl...->lmk...", Dv) + np.einsum("klm...->lmk...", Dv)


def almost_symplectic(model: LagrangianModel, point) -> AlmostStructure:
    """Almost complex structure, ``theta = g(J., .)``, ``omega`` and the checks ``d theta = 0 = theta - d omega``."""
    Jt, p, single = _at(model, point, 4)
    n, batch = model.n, p.shape[1:]
    Jm = complex_structure(n)
    M = blockdiag(Jt.hess, Jt.hess, n, n, batch)
    Th = einsum("ga,gb...->ab...", Jm, M)  # theta(e_a, e_b) = g(J e_a, e_b)
    E = coframe_rows_from(Jt.N, n, n, batch)  # E[alpha, mu] = e^alpha_mu
    Tc = einsum("am...,ab...->mb...", E, Th)
    Tc = einsum("mb...,bk...->mk...", Tc, E)
    dth = exterior_derivative_2form(Tc)
    # omega_mu = 1/2 dL/dy^i on horizontal slots
    zero = Jet.constant(np.zeros(batch), Jt.Ly.d, Jt.Ly.K)
    om = stack([0.5 * Jt.Ly[i] for i in range(n)] + [zero] * n, axis=0)
    Dom = np.stack([om.d_(mu).value for mu in range(2 * n)], axis=0)  # Dom[mu, nu] = d_mu omega_nu
    dom = Dom - np.swapaxes(Dom, 0, 1)
    sq = lambda a: _squeeze(a, single)  # noqa: E731
    return AlmostStructure(
        Jm, sq(Th.value), sq(Tc.value), sq(om.value), sq(dth), sq(Tc.value - dom)
    )


# ---------------------------------------------------------------------------
# normal d-connection


@dataclass
class NormalConnectionData:
    """Normal d-connection of the Lagrange d-metric, batch axes leading.

    ``L[i, j, k] = L^i_jk`` and ``C[i, j, k] = C^i_jk`` act on both blocks;
    ``torsion`` comes from the coefficients and the anholonomy,
    ``torsion_cartan`` independently from ``T^a = d e^a + omega^a_b ^ e^b``
    with a coordinate exterior derivative of the coframe.  Curvature blocks:
    ``R_h[i, h, j, k] = R^i_hjk``, ``P[i, j, k, a] = P^i_jka``,
    ``S[a, b, c, d] = S^a_bcd`` (components of ``R(e_last, e_third) e_second``).
    """

    coefficients: np.ndarray
    L: np.ndarray
    C: np.ndarray
    torsion: np.ndarray
    torsion_cartan: np.ndarray
    anholonomy: np.ndarray
    riemann: np.ndarray
    R_h: np.ndarray
    P: np.ndarray
    S: np.ndarray
    ricci: np.ndarray
    compatibility: np.ndarray


def cartan_torsion(Gam: np.ndarray, N: Jet, n: int, m: int, batch) -> np.ndarray:
    """``T^g_ab = Gamma^g_ab - Gamma^g_ba + (d e^g)(e_b, e_a)`` with d taken in coordinates."""
    E = coframe_rows_from(N, n, m, batch)
    F = frame_matrix_from(N.value, n, m, batch)
    dE = np.stack([E.d_(mu).value for mu in range(n + m)], axis=1)  # dE[g, mu, nu] = d_mu E[g, nu]
    dE = dE - np.swapaxes(dE, 1, 2)
    de = np.einsum("bm...,an...,gmn...->gab...", F, F, dE)
    return Gam - np.swapaxes(Gam, 1, 2) + de


def _normal(model: LagrangianModel, p: np.ndarray):
    Jt = model.jets(p, 4)
    n, batch = model.n, p.shape[1:]
    g, N = Jt.hess, Jt.N
    Gam = normal_coefficients(g, N, _jd, n, batch)
    W, Om = anholonomy_from(N, _jd, n, n, batch)
    R = riemann_from(Gam, W, N, _jd, n, n).value
    T = torsion_from(Gam, W).value
    Q = compatibility_from(Gam, blockdiag(g, g, n, n, batch), N, _jd, n, n).value
    Tc = cartan_torsion(Gam.value, N, n, n, batch)
    return Jt, Gam, Om.value, R, T, Q, Tc


def normal_dconnection(model: LagrangianModel, point) -> NormalConnectionData:
    p, single = as_points(point, model.chart.dim)
    n = model.n
    _, Gam, Om, R, T, Q, Tc = _normal(model, p)
    G = Gam.value
    h, v = slice(0, n), slice(n, 2 * n)
    sq = lambda a: _squeeze(a, single)  # noqa: E731
    return NormalConnectionData(
        coefficients=sq(G),
        L=sq(G[h, h, h]),
        C=sq(G[h, h, v]),
        torsion=sq(T),
        torsion_cartan=sq(Tc),
        anholonomy=sq(Om),
        riemann=sq(R),
        R_h=sq(R[h, h, h, h]),
        P=sq(R[h, h, h, v]),
        S=sq(R[v, v, v, v]),
        ricci=sq(np.einsum("abca...->bc...", R)),
        compatibility=sq(Q),
    )


def chern_weyl_form(J: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``gamma_cd = -1/4 J^a_t R^t_{a cd}`` for a curvature array ``R[t, a, c, d, *batch]``."""
    return -0.25 * np.einsum("at,tacd...->cd...", J, R)


def chern_weyl(model: LagrangianModel, point) -> np.ndarray:
    """Chern-Weyl 2-form of the normal d-connection in the adapted cobasis.

    The normal d-connection preserves the h/v splitting (block-diagonal
    curvature) while J swaps the blocks, so this trace vanishes identically;
    it is computed rather than assumed.
    """
    p, single = as_points(point, model.chart.dim)
    R = _normal(model, p)[3]
    return _squeeze(chern_weyl_form(complex_structure(model.n), R), single)


def lc_distortion(model: LagrangianModel, point):
    """Levi-Civita minus normal d-connection: direct difference and contorsion of the torsion."""
    from .connections import DistortionData

    p, single = as_points(point, model.chart.dim)
    Jt = model.jets(p, 4)
    n, batch = model.n, p.shape[1:]
    g, N = Jt.hess, Jt.N
    Gam = normal_coefficients(g, N, _jd, n, batch)
    LC = levi_civita_adapted(g, g, N, _jd, n, n, batch)
    W, _ = anholonomy_from(N, _jd, n, n, batch)
    T = torsion_from(Gam, W).value
    Zc = contorsion(T, blockdiag(g.value, g.value, n, n, batch))
    return DistortionData(_squeeze((LC - Gam).value, single), _squeeze(Zc, single))


# ---------------------------------------------------------------------------
# nonlinear geodesics


@dataclass
class Trajectory:
    tau: np.ndarray
    x: np.ndarray  # (T, n)
    y: np.ndarray  # (T, n), y = dx/dtau

    def to_csv(self, path) -> None:
        n = self.x.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["tau"] + [f"x{i + 1}" for i in range(n)] + [f"y{n + i + 1}" for i in range(n)])
            for row in np.column_stack([self.tau, self.x, self.y]):
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        a = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = (a.shape[1] - 1) // 2
        return cls(a[:, 0], a[:, 1 : 1 + n], a[:, 1 + n :])


@dataclass
class GeodesicComparison:
    """Nonlinear-geodesic and Euler-Lagrange trajectories on the same tau grid."""

    spray: Trajectory
    euler_lagrange: Trajectory
    deviation: float
    error_estimate: float | None
    step: float


def rk4(f, s0: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Classical fixed-step Runge-Kutta on the grid ``tau``."""
    out = np.empty((len(tau), len(s0)))
    out[0] = s = np.asarray(s0, dtype=float)
    for k in range(len(tau) - 1):
        h = tau[k + 1] - tau[k]
        k1 = f(s)
        k2 = f(s + 0.5 * h * k1)
        k3 = f(s + 0.5 * h * k2)
        k4 = f(s + h * k3)
        s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(s)):
            raise IntegrationError(f"non-finite state at tau = {tau[k + 1]:g}")
        out[k + 1] = s
    return out


class _PointData:
    __slots__ = ("L", "Lx", "Ly", "hess", "Lyx")

    def __init__(self, L, Lx, Ly, hess, Lyx):
        self.L, self.Lx, self.Ly, self.hess, self.Lyx = L, Lx, Ly, hess, Lyx

    def spray(self, y: np.ndarray) -> np.ndarray:
        return 0.25 * np.linalg.solve(self.hess, self.Lyx @ y - self.Lx)


class _Evaluator:
    """Value, gradient and Hessian of L at single points from one order-2 jet.

    Domain exits and degenerate Hessians along a trajectory raise IntegrationError.
    """

    def __init__(self, model: LagrangianModel, domain=None):
        self.model = model
        self.domain = domain
        n = self.n = model.n
        d = 2 * n
        T = tables(d, 2)
        unit = np.eye(d, dtype=int)
        self._g = np.array([T.index[tuple(unit[k])] for k in range(d)])
        H = np.empty((d, d), dtype=np.intp)
        F = np.empty((d, d))
        for a in range(d):
            for b in range(d):
                e = tuple(unit[a] + unit[b])
                H[a, b] = T.index[e]
                F[a, b] = T.fact[T.index[e]]
        self._H, self._F = H, F

    def __call__(self, x: np.ndarray, y: np.ndarray) -> _PointData:
        n = self.n
        p = np.concatenate([x, y])
        if self.domain is not None and not np.all(self.domain.contains(p.reshape(-1, 1))):
            raise IntegrationError("trajectory left the chart domain")
        try:
            c = self.model.L.jet(p, 2).c
        except DomainError as e:
            raise IntegrationError(f"trajectory left the chart domain: {e}") from e
        grad = c[self._g]
        H2 = c[self._H] * self._F
        hess = 0.5 * H2[n:, n:]
        if not np.all(np.isfinite(H2)) or np.linalg.cond(hess) > HESSIAN_COND:
            raise IntegrationError("v-Hessian degenerates along the trajectory")
        return _PointData(float(c[0]), grad[:n], grad[n:], hess, H2[n:, :n])


def _spray_rhs(ev: _Evaluator):
    n = ev.n

    def f(s):
        x, y = s[:n], s[n:]
        return np.concatenate([y, -2.0 * ev(x, y).spray(y)])

    return f


def _el_rhs(ev: _Evaluator, y_guess: np.ndarray, newton_tol: float = 1e-13, max_iter: int = 50):
    """Euler-Lagrange system in (x, p), p_i = dL/dy^i; y(x, p) by Newton iteration."""
    n = ev.n
    state = {"y": np.array(y_guess, dtype=float)}

    def velocity(x, p):
        y = state["y"].copy()
        scale = 1.0 + np.max(np.abs(p))
        for _ in range(max_iter):
            D = ev(x, y)
            r = D.Ly - p
            if np.max(np.abs(r)) <= newton_tol * scale:
                state["y"] = y
                return y, D
            y = y - np.linalg.solve(2.0 * D.hess, r)
        raise IntegrationError("Legendre inversion p -> y did not converge")

    seen: dict[bytes, np.ndarray] = {}

    def f(s):
        x, p = s[:n], s[n:]
        y, D = velocity(x, p)
        seen[s.tobytes()] = y
        return np.concatenate([y, D.Lx])

    def velocity_at(s):
        y = seen.get(s.tobytes())
        return y if y is not None else velocity(s[:n], s[n:])[0]

    return f, velocity_at


def _grid(tau_span, step: float) -> np.ndarray:
    t0, t1 = map(float, tau_span)
    if not t1 > t0 or step <= 0:
        raise ValueError("need tau_span[1] > tau_span[0] and step > 0")
    k = max(1, int(round((t1 - t0) / step)))
    return np.linspace(t0, t1, k + 1)


def geodesic_compare(
    model: LagrangianModel,
    x0,
    y0,
    tau_span=(0.0, 1.0),
    step: float = 1e-3,
    estimate_error: bool = True,
    domain=None,
) -> GeodesicComparison:
    """Integrate ``x'' + 2 G(x, x') = 0`` and the Euler-Lagrange equations independently.

    Both use classical RK4 on the same grid; the Euler-Lagrange system is
    integrated in (x, p) with ``p = dL/dy`` and y recovered by Newton
    inversion.  ``deviation`` is the sup-norm difference of (x, y); the
    optional Richardson estimate compares the spray solution at ``step`` and
    ``step / 2``.
    """
    n = model.n
    x0, y0 = np.asarray(x0, dtype=float), np.asarray(y0, dtype=float)
    if x0.shape != (n,) or y0.shape != (n,):
        raise ValueError(f"x0 and y0 must have length {n}")
    ev = _Evaluator(model, domain)
    tau = _grid(tau_span, step)
    S = rk4(_spray_rhs(ev), np.concatenate([x0, y0]), tau)
    spray = Trajectory(tau, S[:, :n], S[:, n:])

    f_el, velocity = _el_rhs(ev, y0)
    p0 = ev(x0, y0).Ly
    P = rk4(f_el, np.concatenate([x0, p0]), tau)
    Y = np.array([velocity(P[k]) for k in range(len(tau))])
    el = Trajectory(tau, P[:, :n], Y)
    dev = float(max(np.max(np.abs(spray.x - el.x)), np.max(np.abs(spray.y - el.y))))

    err = None
    if estimate_error:
        tau2 = np.linspace(tau[0], tau[-1], 2 * (len(tau) - 1) + 1)
        S2 = rk4(_spray_rhs(ev), np.concatenate([x0, y0]), tau2)
        err = float(np.max(np.abs(S2[::2] - S)) / 15.0)
    return GeodesicComparison(spray, el, dev, err, float(tau[1] - tau[0]))


def spray_trajectory(model: LagrangianModel, x0, y0, tau_span=(0.0, 1.0), step: float = 1e-3, domain=None) -> Trajectory:
    """RK4 solution of the nonlinear geodesic equation alone."""
    n = model.n
    tau = _grid(tau_span, step)
    S = rk4(_spray_rhs(_Evaluator(model, domain)), np.concatenate([np.asarray(x0, float), np.asarray(y0, float)]), tau)
    return Trajectory(tau, S[:, :n], S[:, n:])


def convergence_slope(
    model: LagrangianModel, x0, y0, tau_span=(0.0, 1.0), steps=(0.1, 0.05, 0.025, 0.0125), ref_step: float = 1e-3
) -> tuple[float, list[float]]:
    """Observed order of the spray integrator: log-log fit of endpoint errors vs step.

    The reference is the same integrator at ``ref_step``; the coarse steps keep
    the errors well above both the reference error and roundoff.
    """
    ref = spray_trajectory(model, x0, y0, tau_span, ref_step)
    end = np.concatenate([ref.x[-1], ref.y[-1]])
    errs = []
    for h in steps:
        tr = spray_trajectory(model, x0, y0, tau_span, h)
        errs.append(float(np.max(np.abs(np.concatenate([tr.x[-1], tr.y[-1]]) - end))))
    slope = float(np.polyfit(np.log(steps), np.log(errs), 1)[0])
    return slope, errs


def energy(model: LagrangianModel, traj: Trajectory) -> np.ndarray:
    """``E = y^i dL/dy^i - L`` along a trajectory (equal to L for 2-homogeneous L)."""
    p = np.concatenate([traj.x, traj.y], axis=1).T
    Lj = model.L.jet(p, 1)
    n = model.n
    Ly = np.stack([Lj.d_(n + i).value for i in range(n)])
    return np.einsum("it,ti->t", Ly, traj.y) - Lj.value


def lagrangian_along(model: LagrangianModel, traj: Trajectory) -> np.ndarray:
    return model.L(np.concatenate([traj.x, traj.y], axis=1).T)
