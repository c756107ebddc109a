"""Gamma d-matrices, spin d-connection and the Dirac d-operator.

Vielbeins are orthonormalised per block (h and v separately), so the frame
group splits as Spin(n) x Spin(m).  ``E[alpha, A] = e_A^alpha`` are the
components of the orthonormal frame in the N-adapted basis, with
``E eta E^T = g^{-1}`` (block-diagonal) and ``eta`` the chart signature.
Curved gammas are ``gamma^alpha = E[alpha, A] gamma^A``.

Connection forms use the package convention ``D_{e_b} e_a = Gamma^c_{ab} e_c``;
in the orthonormal frame ``omega^C_{B mu} = E^{-1}[C, g] (e_mu E[g, B] +
Gamma^g_{b mu} E[b, B])`` and the spinor connection is
``Omega_mu = 1/4 omega_{CB mu} gamma^C gamma^B``, which makes the curved
gammas covariantly constant.  Complex numbers are confined to this module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .connections import _kernels, CANONICAL
from .errors import SingularMetricError
from .fields import Chart, Jet, ScalarField, absolute, evaluate, stack
from .geometry import DMetric, as_points

__all__ = [
    "GammaSet",
    "SpinorField",
    "SpinData",
    "DiracResult",
    "flat_gammas",
    "orthonormal_vielbein",
    "gamma_set",
    "spin_dconnection",
    "spin_data",
    "dirac_apply",
    "gamma_covariance_residual",
    "spinor_product",
]

_PAULI = (
    np.array([[0, 1], [1, 0]], dtype=complex),
    np.array([[0, -1j], [1j, 0]], dtype=complex),
    np.array([[1, 0], [0, -1]], dtype=complex),
)
_DEGENERATE_GAP = 1e-7


# ---------------------------------------------------------------------------
# flat gammas


def _euclidean_generators(d: int) -> np.ndarray:
    """Hermitian matrices squaring to I and pairwise anticommuting.

    For d = 4 this is the Dirac representation (beta, beta alpha_k up to i);
    other dimensions use the Jordan-Wigner construction.
    """
    if d == 4:
        I2, Z2 = np.eye(2), np.zeros((2, 2))
        beta = np.block([[I2, Z2], [Z2, -I2]]).astype(complex)
        out = [beta]
        for s in _PAULI:
            out.append(np.block([[Z2, -1j * s], [1j * s, Z2]]))
        return np.array(out)
    k = d // 2
    X, Y, Z = _PAULI
    I2 = np.eye(2, dtype=complex)

    def kron(ms):
        out = np.eye(1, dtype=complex)
        for a in ms:
            out = np.kron(out, a)
        return out

    gens = []
    for j in range(k):
        for P in (X, Y):
            gens.append(kron([Z] * j + [P] + [I2] * (k - j - 1)))
    if d % 2:
        gens.append(kron([Z] * k) if k else np.eye(1, dtype=complex))
    return np.array(gens)


def flat_gammas(signature: Sequence[int]) -> np.ndarray:
    """``gamma^A`` with ``{gamma^A, gamma^B} = 2 eta^{AB} I``; shape (d, S, S)."""
    eta = np.asarray(signature)
    E = _euclidean_generators(len(eta))
    return np.where(eta > 0, 1.0, 1j)[:, None, None] * E


@dataclass
class GammaSet:
    """Flat gammas for the chart signature and curved gammas at the evaluation point(s)."""

    eta: np.ndarray
    flat: np.ndarray
    vielbein: np.ndarray
    curved: np.ndarray

    @property
    def flat_lower(self) -> np.ndarray:
        return self.eta[:, None, None] * self.flat

    def anticommutator(self) -> np.ndarray:
        """{gamma^alpha, gamma^beta} at each point, shape (..., d, d, S, S)."""
        c = self.curved
        ab = np.einsum("...aij,...bjk->...abik", c, c)
        return ab + np.swapaxes(ab, -3, -4)


# ---------------------------------------------------------------------------
# vielbeins


def _fprime(lam: np.ndarray) -> np.ndarray:
    return -0.5 * np.sign(lam) * np.abs(lam) ** -1.5


def _eigen_block(A: np.ndarray, dA: np.ndarray):
    """E = |A|^{-1/2} (symmetric) and its directional derivatives (Daleckii-Krein)."""
    lam, V = np.linalg.eigh(A)
    f = np.abs(lam) ** -0.5
    E = np.einsum("...ik,...k,...jk->...ij", V, f, V)
    li, lj = lam[..., :, None], lam[..., None, :]
    scale = np.max(np.abs(lam), axis=-1)[..., None, None]
    close = np.abs(li - lj) <= _DEGENERATE_GAP * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        F = np.where(close, _fprime(0.5 * (li + lj)), (f[..., :, None] - f[..., None, :]) / (li - lj))
    Vt = np.swapaxes(V, -1, -2)
    dE = V @ (F * (Vt @ dA @ V)) @ Vt
    return E, dE, lam


def _ldl_block(Aj: Jet, k: int):
    """E = L^{-T} |D|^{-1/2} from A = L D L^T on jets; returns E jet entries and D values."""
    L = [[None] * k for _ in range(k)]
    D: list[Jet] = [None] * k
    for j in range(k):
        s = Aj[j, j]
        for p in range(j):
            s = s - L[j][p] * L[j][p] * D[p]
        if np.any(np.abs(s.value) < 1e-300):
            raise SingularMetricError("indefinite block has a vanishing leading minor")
        D[j] = s
        for i in range(j + 1, k):
            t = Aj[i, j]
            for p in range(j):
                t = t - L[i][p] * L[j][p] * D[p]
            L[i][j] = t / D[j]
    M = [[None] * k for _ in range(k)]  # M = L^{-1}
    for i in range(k):
        M[i][i] = Jet.constant(np.ones(Aj.shape[2:]), Aj.d, Aj.K)
        for j in range(i):
            t = L[i][j] * M[j][j]
            for p in range(j + 1, i):
                t = t + L[i][p] * M[p][j]
            M[i][j] = -t
    zero = Jet.constant(np.zeros(Aj.shape[2:]), Aj.d, Aj.K)
    scale = [absolute(D[a]) ** -0.5 for a in range(k)]
    rows = [stack([M[A][al] * scale[A] if M[A][al] is not None else zero for A in range(k)]) for al in range(k)]
    return stack(rows), np.array([np.sign(Dj.value) for Dj in D])


def _block(Aj: Jet, eta: np.ndarray):
    """Vielbein block values (B, k, k) and coordinate derivatives (d, B, k, k)."""
    k, d = Aj.shape[0], Aj.d
    if np.all(eta == eta[0]):
        A = np.moveaxis(Aj.value, (0, 1), (-2, -1))
        dA = np.stack([np.moveaxis(Aj.partial((mu,)), (0, 1), (-2, -1)) for mu in range(d)])
        E, dE, lam = _eigen_block(A, dA)
        if np.any(np.sign(lam) != eta[0]):
            raise SingularMetricError("metric block signature does not match the chart signature")
        return E, dE
    Ej, sgn = _ldl_block(Aj, k)
    if np.any(sgn != eta[:, None]):
        raise SingularMetricError("metric block signature does not match the chart signature")
    E = np.moveaxis(Ej.value, (0, 1), (-2, -1))
    dE = np.stack([np.moveaxis(Ej.partial((mu,)), (0, 1), (-2, -1)) for mu in range(d)])
    return E, dE


def _vielbein_jets(G: Jet, H: Jet, N: Jet, chart: Chart):
    """Full block vielbein E (B, d, d), its adapted derivatives e_mu E (d, B, d, d), eta."""
    n, m = chart.dim_h, chart.dim_v
    eta = np.asarray(chart.signature, dtype=float)
    Eg, dEg = _block(G, eta[:n])
    Eh, dEh = _block(H, eta[n:])
    B = Eg.shape[:-2]
    E = np.zeros(B + (n + m, n + m))
    E[..., :n, :n], E[..., n:, n:] = Eg, Eh
    dE = np.zeros((n + m,) + B + (n + m, n + m))
    dE[..., :n, :n], dE[..., n:, n:] = dEg, dEh
    Nv = np.moveaxis(N.value, (0, 1), (-2, -1))  # (B, m, n)
    adapted = dE.copy()
    for i in range(n):
        adapted[i] = dE[i] - np.einsum("...a,a...jk->...jk", Nv[..., :, i], dE[n:])
    return E, adapted, eta


def orthonormal_vielbein(m: DMetric, point) -> tuple[np.ndarray, np.ndarray]:
    """``(E, E^{-1})`` with ``E[alpha, A] = e_A^alpha`` and ``E eta E^T = g^{-1}`` per block."""
    p, single = as_points(point, m.chart.dim)
    G, H, N = m.jets(p, 1)
    _check_blocks(G.value, H.value)
    E, _, _ = _vielbein_jets(G, H, N, m.chart)
    Einv = np.linalg.inv(E)
    return (E[0], Einv[0]) if single else (E, Einv)


def _check_blocks(G: np.ndarray, H: np.ndarray) -> None:
    for X in (G, H):
        det = np.linalg.det(np.moveaxis(X, (0, 1), (-2, -1)))
        if np.any(det == 0) or not np.all(np.isfinite(det)):
            raise SingularMetricError("d-metric block is singular at an evaluation point")


# ---------------------------------------------------------------------------
# spin connection


@dataclass
class SpinData:
    """Per-point spin geometry; leading axis runs over points."""

    eta: np.ndarray
    flat: np.ndarray  # (d, S, S)
    E: np.ndarray  # (B, d, d)
    Einv: np.ndarray
    dE: np.ndarray  # (B, mu, d, d): e_mu E
    Gamma: np.ndarray  # (B, c, a, b)
    N: np.ndarray  # (B, m, n)
    curved: np.ndarray  # (B, alpha, S, S)
    omega: np.ndarray  # (B, C, B', mu)
    Omega: np.ndarray  # (B, mu, S, S)


def spin_data(m: DMetric, points: np.ndarray) -> SpinData:
    """Spin geometry at (d, npts) points."""
    G, H, N, Gam = _kernels(m, points, CANONICAL, 1)
    E, dE, eta = _vielbein_jets(G, H, N, m.chart)
    Einv = np.linalg.inv(E)
    Gv = np.moveaxis(Gam.value, -1, 0)  # (B, c, a, b)
    dE = np.moveaxis(dE, 0, 1)
    omega = np.einsum("...Cg,...mgB->...CBm", Einv, dE) + np.einsum("...Cg,...gbm,...bB->...CBm", Einv, Gv, E)
    flat = flat_gammas(eta)
    lower = eta[:, None, None] * flat
    pair = np.einsum("Cij,Bjk->CBik", lower, flat)
    Omega = 0.25 * np.einsum("...CBm,CBik->...mik", omega, pair)
    curved = np.einsum("...aA,Aij->...aij", E, flat)
    Nv = np.moveaxis(N.value, -1, 0)
    return SpinData(eta, flat, E, Einv, dE, Gv, Nv, curved, omega, Omega)


def gamma_set(m: DMetric, point) -> GammaSet:
    p, single = as_points(point, m.chart.dim)
    G, H, N = m.jets(p, 1)
    _check_blocks(G.value, H.value)
    E, _, eta = _vielbein_jets(G, H, N, m.chart)
    flat = flat_gammas(eta)
    curved = np.einsum("...aA,Aij->...aij", E, flat)
    if single:
        E, curved = E[0], curved[0]
    return GammaSet(eta, flat, E, curved)


def spin_dconnection(m: DMetric, point) -> np.ndarray:
    """Spinor connection matrices ``Omega_mu`` per adapted direction mu; shape (..., d, S, S)."""
    p, single = as_points(point, m.chart.dim)
    Om = spin_data(m, p).Omega
    return Om[0] if single else Om


def gamma_covariance_residual(m: DMetric, point) -> np.ndarray:
    """``e_mu gamma^alpha + Gamma^alpha_{b mu} gamma^b + [Omega_mu, gamma^alpha]``, shape (..., mu, alpha, S, S)."""
    p, single = as_points(point, m.chart.dim)
    sd = spin_data(m, p)
    de = np.einsum("...maA,Aij->...maij", sd.dE, sd.flat)
    conn = np.einsum("...abm,...bij->...maij", sd.Gamma, sd.curved)
    OG = np.einsum("...mij,...ajk->...maik", sd.Omega, sd.curved)
    GO = np.einsum("...aij,...mjk->...maik", sd.curved, sd.Omega)
    res = de + conn + OG - GO
    return res[0] if single else res


# ---------------------------------------------------------------------------
# spinors and the Dirac operator


class SpinorField:
    """Spinor with complex components given as (real, imaginary) ScalarField pairs."""

    def __init__(self, re: Sequence, im: Sequence | None, chart: Chart):
        def conv(x):
            if isinstance(x, ScalarField):
                return x
            if isinstance(x, str):
                return ScalarField.parse(x, chart)
            return ScalarField.constant(float(x), chart)

        im = [0.0] * len(re) if im is None else im
        if len(re) != len(im):
            raise ValueError("real and imaginary parts need the same number of components")
        self.re = [conv(x) for x in re]
        self.im = [conv(x) for x in im]
        self.chart = chart

    @property
    def size(self) -> int:
        return len(self.re)

    def scaled(self, f: ScalarField) -> "SpinorField":
        """Pointwise product f * psi for a real scalar f."""
        return SpinorField([f * x for x in self.re], [f * x for x in self.im], self.chart)

    def jets(self, points: np.ndarray, order: int = 1) -> tuple[np.ndarray, np.ndarray | None]:
        """Values (B, S) and coordinate derivatives (d, B, S) (None for order 0)."""
        js = evaluate(self.re + self.im, points, order)
        S = self.size
        val = np.stack([js[k].value + 1j * js[S + k].value for k in range(S)], axis=-1)
        if order < 1:
            return val, None
        d = self.chart.dim
        der = np.stack(
            [np.stack([js[k].partial((mu,)) + 1j * js[S + k].partial((mu,)) for k in range(S)], axis=-1) for mu in range(d)]
        )
        return val, der


@dataclass
class DiracResult:
    """D psi and its horizontal / vertical parts (total = h + v)."""

    total: np.ndarray
    h: np.ndarray
    v: np.ndarray


def _adapted(der: np.ndarray, N: np.ndarray, n: int) -> np.ndarray:
    """e_alpha psi from coordinate derivatives (d, B, S) and N (B, m, n)."""
    out = der.copy()
    out[:n] = der[:n] - np.einsum("...ai,a...s->i...s", N, der[n:])
    return out


def dirac_apply(m: DMetric, psi: SpinorField, point) -> DiracResult:
    """``D psi = -i gamma^alpha (e_alpha psi + Omega_alpha psi)`` with h/v parts."""
    ch = m.chart
    p, single = as_points(point, ch.dim)
    sd = spin_data(m, p)
    if psi.size != sd.flat.shape[-1]:
        raise ValueError(f"spinor needs {sd.flat.shape[-1]} components")
    val, der = psi.jets(p, 1)
    cov = _adapted(der, sd.N, ch.dim_h)  # (alpha, B, S)
    cov = np.moveaxis(cov, 0, 1) + np.einsum("...aij,...j->...ai", sd.Omega, val)
    terms = -1j * np.einsum("...aij,...aj->...ai", sd.curved, cov)
    hpart = terms[..., : ch.dim_h, :].sum(axis=-2)
    vpart = terms[..., ch.dim_h :, :].sum(axis=-2)
    out = DiracResult(hpart + vpart, hpart, vpart)
    if single:
        out = DiracResult(out.total[0], out.h[0], out.v[0])
    return out


def spinor_product(m: DMetric, psi: SpinorField, chi: SpinorField, bounds: Sequence[tuple[float, float]], nodes: int = 12) -> complex:
    """``<psi, chi> = int psi^dagger chi |nu_g|`` over a coordinate box (Gauss-Legendre)."""
    ch = m.chart
    if len(bounds) != ch.dim:
        raise ValueError("one (lo, hi) pair per coordinate required")
    x, w = np.polynomial.legendre.leggauss(nodes)
    axes = [0.5 * (hi - lo) * x + 0.5 * (hi + lo) for lo, hi in bounds]
    wts = [0.5 * (hi - lo) * w for lo, hi in bounds]
    P = np.stack(np.meshgrid(*axes, indexing="ij")).reshape(ch.dim, -1)
    W = np.prod(np.stack(np.meshgrid(*wts, indexing="ij")), axis=0).reshape(-1)
    G, H, _ = (j.value for j in m.jets(P, 0))
    nu = np.sqrt(np.abs(np.linalg.det(np.moveaxis(G, (0, 1), (-2, -1))) * np.linalg.det(np.moveaxis(H, (0, 1), (-2, -1)))))
    a, _ = psi.jets(P, 0)
    b, _ = chi.jets(P, 0)
    return complex(np.sum(W * nu * np.einsum("ps,ps->p", a.conj(), b)))
