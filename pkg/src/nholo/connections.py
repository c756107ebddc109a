"""Canonical d-connection, Levi-Civita connection, distortion, torsion and curvature.

Conventions (all in the N-adapted basis e_alpha):

* ``Gamma[c, a, b] = Gamma^c_{ab}`` with ``D_{e_b} e_a = Gamma^c_{ab} e_c``;
  so ``L^i_{jk} = Gamma[i, j, k]``, ``C^i_{jc} = Gamma[i, j, c]`` etc.
* torsion ``T[c, a, b] = Gamma^c_{ab} - Gamma^c_{ba} + W^c_{ab}``;
* curvature ``R[a, b, c, d]`` are the components of ``R(e_d, e_c) e_b``,
  i.e. ``R^a_{bcd} = e_d Gamma^a_{bc} - e_c Gamma^a_{bd} + ... ``;
* Ricci ``Ric[b, c] = R^a_{bca}``; for d-connections it is not symmetric.

Curvature is obtained from a second forward-mode pass: the connection is
computed as a jet whose own derivatives feed the Riemann tensor.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import OrderError, SingularMetricError
from .fields import Jet, einsum, inv, stack
from .geometry import (
    DMetric,
    _check_invertible,
    _squeeze,
    adapted_derivatives,
    anholonomy_from,
    as_points,
    blockdiag,
    coframe_rows_from,
    frame_matrix_from,
    offdiagonal_from,
    zeros_batch,
)

CANONICAL = "canonical"
LEVI_CIVITA = "levi_civita"
NORMAL = "normal"
_KINDS = (CANONICAL, LEVI_CIVITA, NORMAL)

__all__ = [
    "CANONICAL",
    "LEVI_CIVITA",
    "NORMAL",
    "ConnectionData",
    "CurvatureData",
    "DistortionData",
    "canonical_dconnection",
    "levi_civita",
    "distortion",
    "torsion",
    "curvature",
    "metric_compatibility",
]


def _jd(X, axis):
    return X.d_(axis)


# ---------------------------------------------------------------------------
# backend-generic kernels (jets or grid arrays)


def canonical_coefficients(G, H, N, D, n: int, m: int, batch):
    """Canonical d-connection ``Gamma[c, a, b]`` from the d-metric blocks."""
    eG = adapted_derivatives(G, N, D, n, m)
    eH = adapted_derivatives(H, N, D, n, m)
    gi, hi = inv(G), inv(H)
    # L^i_jk = 1/2 g^ir (e_k g_jr + e_j g_kr - e_r g_jk)
    A = stack(eG[:n], axis=2)  # A[j, r, k] = e_k g_jr
    S = A + einsum("krj...->jrk...", A) - einsum("jkr...->jrk...", A)
    Lh = 0.5 * einsum("ir...,jrk...->ijk...", gi, S)
    # C^i_jc = 1/2 g^ik e_c g_jk
    Ac = stack(eG[n:], axis=2)  # Ac[j, k, c]
    Ch = 0.5 * einsum("ik...,jkc...->ijc...", gi, Ac)
    # C^a_bc = 1/2 h^ad (e_c h_bd + e_b h_cd - e_d h_bc)
    B = stack(eH[n:], axis=2)  # B[b, d, c] = e_c h_bd
    Sv = einsum("bdc...->dbc...", B) + einsum("cdb...->dbc...", B) - einsum("bcd...->dbc...", B)
    Cv = 0.5 * einsum("ad...,dbc...->abc...", hi, Sv)
    # L^a_bk = e_b N^a_k + 1/2 h^ac (e_k h_bc - h_dc e_b N^d_k - h_db e_c N^d_k)
    dN = stack([D(N, n + b) for b in range(m)], axis=2)  # dN[a, k, b] = d_b N^a_k
    Ah = stack(eH[:n], axis=2)  # Ah[b, c, k] = e_k h_bc
    X1 = einsum("dc...,dkb...->bck...", H, dN)  # h_dc e_b N^d_k
    term = Ah - X1 - einsum("bck...->cbk...", X1)
    Lv = einsum("akb...->abk...", dN) + 0.5 * einsum("ac...,bck...->abk...", hi, term)
    Gam = zeros_batch(Lh, (n + m,) * 3, batch)
    h_, v_ = slice(0, n), slice(n, n + m)
    Gam[h_, h_, h_] = Lh
    Gam[h_, h_, v_] = Ch
    Gam[v_, v_, h_] = Lv
    Gam[v_, v_, v_] = Cv
    return Gam


def normal_coefficients(G, N, D, n: int, batch):
    """Normal d-connection of a Lagrange-type d-metric (h-block copied to the v-block).

    ``L^i_jk = 1/2 g^ih (e_k g_jh + e_j g_hk - e_h g_jk)`` and
    ``C^i_jk = 1/2 g^ih (e_k g_jh + e_j g_hk - e_h g_jk)`` with vertical
    derivatives; the same coefficients act on both blocks.
    """
    eG = adapted_derivatives(G, N, D, n, n)
    gi = inv(G)
    A = stack(eG[:n], axis=2)
    S = A + einsum("krj...->jrk...", A) - einsum("jkr...->jrk...", A)
    L = 0.5 * einsum("ir...,jrk...->ijk...", gi, S)
    B = stack(eG[n:], axis=2)
    Sv = B + einsum("krj...->jrk...", B) - einsum("jkr...->jrk...", B)
    C = 0.5 * einsum("ir...,jrk...->ijk...", gi, Sv)
    Gam = zeros_batch(L, (2 * n,) * 3, batch)
    h_, v_ = slice(0, n), slice(n, 2 * n)
    Gam[h_, h_, h_] = L
    Gam[v_, v_, h_] = L
    Gam[h_, h_, v_] = C
    Gam[v_, v_, v_] = C
    return Gam


def christoffel(M, D, dim: int):
    """Coordinate Christoffel symbols ``Gc[l, m, n]`` of the matrix field M."""
    Mi = inv(M)
    dM = stack([D(M, k) for k in range(dim)], axis=2)  # dM[s, n, m] = d_m M_sn
    S = einsum("snm...->smn...", dM) + dM - einsum("mns...->smn...", dM)
    return 0.5 * einsum("ls...,smn...->lmn...", Mi, S)


def levi_civita_adapted(G, H, N, D, n: int, m: int, batch):
    """Levi-Civita connection of the off-diagonal metric, rewritten in the adapted basis."""
    M = offdiagonal_from(G, H, N, n, m, batch)
    Gc = christoffel(M, D, n + m)
    F = frame_matrix_from(N, n, m, batch)
    E = coframe_rows_from(N, n, m, batch)
    eF = stack(adapted_derivatives(F, N, D, n, m), axis=2)  # eF[a, l, b] = e_b F[a, l]
    t1 = einsum("alb...->lab...", eF)
    FG = einsum("bn...,lmn...->lmb...", F, Gc)
    t2 = einsum("am...,lmb...->lab...", F, FG)
    return einsum("cl...,lab...->cab...", E, t1 + t2)


def torsion_from(Gam, W):
    return Gam - einsum("cab...->cba...", Gam) + W


def riemann_from(Gam, W, N, D, n: int, m: int):
    """R[a, b, c, d] for ``R(e_d, e_c) e_b``."""
    eGam = stack(adapted_derivatives(Gam, N, D, n, m), axis=3)  # eGam[a, b, c, d] = e_d Gam^a_bc
    R = eGam - einsum("abcd...->abdc...", eGam)
    GG = einsum("mbc...,amd...->abcd...", Gam, Gam)
    R = R + GG - einsum("abcd...->abdc...", GG)
    R = R - einsum("mdc...,abm...->abcd...", W, Gam)
    return R


def ricci_from(R):
    return einsum("abca...->bc...", R)


def compatibility_from(Gam, Mdiag, N, D, n: int, m: int):
    """Q[a, b, c] = (D_{e_c} g)_{ab} for the block-diagonal d-metric ``Mdiag``."""
    eM = stack(adapted_derivatives(Mdiag, N, D, n, m), axis=2)
    GM = einsum("mac...,mb...->abc...", Gam, Mdiag)
    return eM - GM - einsum("abc...->bac...", GM)


# ---------------------------------------------------------------------------
# public data types


@dataclass
class ConnectionData:
    """Connection coefficients at one point (or a batch, leading batch axis)."""

    kind: str
    coefficients: np.ndarray
    n: int
    m: int

    def _blk(self, c, a, b):
        h, v = slice(0, self.n), slice(self.n, self.n + self.m)
        s = {"h": h, "v": v}
        return self.coefficients[..., s[c], s[a], s[b]]

    @property
    def L_h(self):  # L^i_jk
        return self._blk("h", "h", "h")

    @property
    def L_v(self):  # L^a_bk
        return self._blk("v", "v", "h")

    @property
    def C_h(self):  # C^i_jc
        return self._blk("h", "h", "v")

    @property
    def C_v(self):  # C^a_bc
        return self._blk("v", "v", "v")


@dataclass
class CurvatureData:
    torsion: np.ndarray
    riemann: np.ndarray | None = None
    ricci: np.ndarray | None = None
    scalar: np.ndarray | None = None


@dataclass
class DistortionData:
    Z: np.ndarray
    closed_form: np.ndarray | None = None


def _point_order(field_order: int, needed: int, kind: str):
    if field_order < needed:
        raise OrderError(f"{kind} needs metric smoothness >= {needed}")


def _kernels(m: DMetric, p: np.ndarray, kind: str, order: int):
    """Jets of the metric and of the connection (order ``order - 1``)."""
    if kind not in _KINDS:
        raise ValueError(f"unknown connection kind {kind!r}")
    for f in m.fields():
        if f.smoothness < order:
            raise OrderError(f"metric field smoothness {f.smoothness} < required order {order}")
    n, mm = m.n, m.m
    G, H, N = m.jets(p, order)
    _check_invertible(G.value, H.value)
    batch = p.shape[1:]
    if kind == CANONICAL:
        Gam = canonical_coefficients(G, H, N, _jd, n, mm, batch)
    elif kind == NORMAL:
        if n != mm:
            raise ValueError("normal d-connection requires dim_h == dim_v")
        Gam = normal_coefficients(G, N, _jd, n, batch)
    else:
        Gam = levi_civita_adapted(G, H, N, _jd, n, mm, batch)
    return G, H, N, Gam


def connection_jet(m: DMetric, points: np.ndarray, kind: str = CANONICAL, order: int = 1):
    """Connection coefficients as a jet of order ``order`` at (d, npts) points."""
    return _kernels(m, points, kind, order + 1)[3]


def _connection(m: DMetric, point, kind: str) -> ConnectionData:
    p, single = as_points(point, m.chart.dim)
    Gam = _kernels(m, p, kind, 1)[3]
    return ConnectionData(kind, _squeeze(Gam.value, single), m.n, m.m)


def canonical_dconnection(m: DMetric, point) -> ConnectionData:
    return _connection(m, point, CANONICAL)


def levi_civita(m: DMetric, point) -> ConnectionData:
    return _connection(m, point, LEVI_CIVITA)


def normal_dconnection(m: DMetric, point) -> ConnectionData:
    return _connection(m, point, NORMAL)


def torsion(m: DMetric, kind: str, point) -> CurvatureData:
    p, single = as_points(point, m.chart.dim)
    G, H, N, Gam = _kernels(m, p, kind, 1)
    W, _ = anholonomy_from(N, _jd, m.n, m.m, p.shape[1:])
    T = torsion_from(Gam, W)
    return CurvatureData(torsion=_squeeze(T.value, single))


def curvature_batch(m: DMetric, p: np.ndarray, kind: str = CANONICAL, quad_tol: float | None = None):
    """Torsion, Riemann, Ricci and scalar curvature as arrays with trailing batch axes."""
    if kind not in _KINDS:
        raise ValueError(f"unknown connection kind {kind!r}")
    for f in m.fields():
        if f.smoothness < 2:
            raise OrderError("curvature needs metric smoothness >= 2")
    G, H, N = m.jets(p, 2, quad_tol)
    return curvature_from_jets(G, H, N, kind, m.n, m.m)


def curvature_from_jets(G: Jet, H: Jet, N: Jet, kind: str, n: int, mm: int):
    """As :func:`curvature_batch` but from order-2 jets of the d-metric blocks."""
    _check_invertible(G.value, H.value)
    batch = G.shape[2:]
    if kind == CANONICAL:
        Gam = canonical_coefficients(G, H, N, _jd, n, mm, batch)
    elif kind == NORMAL:
        Gam = normal_coefficients(G, N, _jd, n, batch)
    else:
        Gam = levi_civita_adapted(G, H, N, _jd, n, mm, batch)
    W, _ = anholonomy_from(N, _jd, n, mm, batch)
    R = riemann_from(Gam, W, N, _jd, n, mm)
    T = torsion_from(Gam, W).value
    R = R.value
    Ric = np.einsum("abca...->bc...", R)
    if kind == NORMAL:
        Minv = blockdiag(inv(G.value), inv(G.value), n, mm, batch)
    else:
        Minv = blockdiag(inv(G.value), inv(H.value), n, mm, batch)
    sR = np.einsum("bc...,bc...->...", Minv, Ric)
    return T, R, Ric, sR


def curvature(m: DMetric, kind: str, point) -> CurvatureData:
    """Full torsion, Riemann, Ricci (both index orders kept) and scalar curvature."""
    p, single = as_points(point, m.chart.dim)
    T, R, Ric, sR = curvature_batch(m, p, kind)
    sq = lambda a: _squeeze(a, single)  # noqa: E731
    return CurvatureData(sq(T), sq(R), sq(Ric), sR[0] if single else sR)


def metric_compatibility(m: DMetric, point, kind: str = CANONICAL) -> np.ndarray:
    """Components of D g in the adapted basis; zero for metric-compatible connections."""
    p, single = as_points(point, m.chart.dim)
    G, H, N, Gam = _kernels(m, p, kind, 1)
    if kind == NORMAL:
        M = blockdiag(G, G, m.n, m.m, p.shape[1:])
    else:
        M = blockdiag(G, H, m.n, m.m, p.shape[1:])
    Q = compatibility_from(Gam, M, N, _jd, m.n, m.m)
    return _squeeze(Q.value, single)


# ---------------------------------------------------------------------------
# distortion


def torsion_closed_form(G, H, N, Gam, D, n: int, m: int, batch):
    """Canonical d-torsion from its component formulas.

    ``T^i_ja = C^i_ja``, ``T^a_ij = Omega^a_ij``, ``T^a_ib = d_b N^a_i - L^a_bi``,
    antisymmetric in the lower pair; all other components vanish.
    """
    _, Om = anholonomy_from(N, D, n, m, batch)
    h_, v_ = slice(0, n), slice(n, n + m)
    Ch = Gam[h_, h_, v_]
    Lv = Gam[v_, v_, h_]
    dN = stack([D(N, n + b) for b in range(m)], axis=2)  # [a, i, b] = d_b N^a_i
    T = zeros_batch(Ch, (n + m,) * 3, batch)
    T[h_, h_, v_] = Ch
    T[h_, v_, h_] = -einsum("ijb...->ibj...", Ch)
    T[v_, h_, h_] = Om
    Tib = dN - einsum("abi...->aib...", Lv)
    T[v_, h_, v_] = Tib
    T[v_, v_, h_] = -einsum("aib...->abi...", Tib)
    return T


def contorsion(T, M):
    """Z with ``Z_cab = 1/2 (T_acb + T_bca - T_cab)`` (indices lowered by M)."""
    Tl = einsum("cd...,dab...->cab...", M, T)
    K = 0.5 * (einsum("acb...->cab...", Tl) + einsum("bca...->cab...", Tl) - Tl)
    return einsum("dc...,cab...->dab...", inv(M), K)


def distortion_closed_form(G, H, N, Gam, D, n: int, m: int, batch):
    """Distortion to Levi-Civita from the closed-form torsion (metric-compatible case)."""
    T = torsion_closed_form(G, H, N, Gam, D, n, m, batch)
    return contorsion(T, blockdiag(G, H, n, m, batch))


def distortion(m: DMetric, point) -> DistortionData:
    """Z = Levi-Civita - canonical, directly and from the closed-form expressions."""
    p, single = as_points(point, m.chart.dim)
    G, H, N = m.jets(p, 1)
    _check_invertible(G.value, H.value)
    batch = p.shape[1:]
    Gam = canonical_coefficients(G, H, N, _jd, m.n, m.m, batch)
    LC = levi_civita_adapted(G, H, N, _jd, m.n, m.m, batch)
    Z = (LC - Gam).value
    Zc = distortion_closed_form(G, H, N, Gam, _jd, m.n, m.m, batch).value
    return DistortionData(_squeeze(Z, single), _squeeze(Zc, single))
