"""Nonholonomic Ricci flow of d-metrics on periodic grids.

The state samples the d-metric blocks ``g_ij``, ``h_ab``, the (fixed)
N-connection and an optional function ``f`` on a periodic tensor grid over
the chart.  Axes with a single node are parameters: fields do not depend on
them and they carry no derivative or quadrature weight.  The canonical
d-connection and its curvature are computed per node by the backend-generic
kernels of :mod:`nholo.connections`, with derivatives from periodic
finite differences (4th order, default) or FFT differentiation.

Flow (``chi`` forward, ``tau = tau0 - chi``)::

    d g_ij / d chi = -2 R_(ij) + (2 r / k) g_ij ,   d h_ab / d chi = -2 R_(ab) + (2 r / k) h_ab
    d f / d chi    = -Lap f + |D f|^2 - sR  (+ (n+m) / (2 tau) in "W" coupling)

where only the symmetric part of the Ricci d-tensor drives the metric, the
normalisation term is present in normalized mode with ``r = int sR dV / int dV``
and ``k = n + m`` (``k = 5`` with ``normalization="printed"``).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .connections import canonical_coefficients, riemann_from, ricci_from
from .errors import DegenerationError, QuadratureError, StabilityError
from .fields import ScalarField
from .geometry import DMetric, adapted_derivatives, anholonomy_from

__all__ = [
    "PeriodicGrid",
    "FlowState",
    "FrameField",
    "FunctionalReport",
    "ProbeReport",
    "FlowGeometry",
    "initial_state",
    "flow_geometry",
    "flow_step",
    "evolve_frames",
    "stability_bound",
    "functionals",
    "fluctuation_integrand",
    "monotonicity_probe",
    "run_flow",
    "total_volume",
    "total_measure",
    "coarsen",
]

# largest |symbol| * h of the periodic first-derivative stencils
_FD4_SYMBOL = 1.3722
_RK4_REAL_STABILITY = 2.78


# ---------------------------------------------------------------------------
# grid and differencing


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid; ``shape[k] == 1`` marks a parameter axis fixed at ``origin[k]``."""

    shape: tuple[int, ...]
    lengths: tuple[float, ...] = ()
    origin: tuple[float, ...] = ()
    derivative: str = "fd4"

    def __post_init__(self):
        d = len(self.shape)
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths) or (2 * np.pi,) * d)
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin) or (0.0,) * d)
        if len(self.lengths) != d or len(self.origin) != d:
            raise ValueError("lengths and origin need one entry per axis")
        if any(s < 1 for s in self.shape) or any(s in (2, 3, 4) for s in self.shape):
            raise ValueError("periodic axes need at least 5 nodes (or exactly 1 for a parameter axis)")
        if self.derivative not in ("fd4", "spectral"):
            raise ValueError("derivative must be 'fd4' or 'spectral'")

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / s for L, s in zip(self.lengths, self.shape))

    @property
    def active(self) -> tuple[int, ...]:
        return tuple(k for k, s in enumerate(self.shape) if s > 1)

    def axes(self) -> list[np.ndarray]:
        return [o + h * np.arange(s) for o, h, s in zip(self.origin, self.spacing, self.shape)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape (d, *shape)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=0)

    @property
    def cell(self) -> float:
        return float(np.prod([self.spacing[k] for k in self.active])) if self.active else 1.0

    def refine(self) -> "PeriodicGrid":
        return replace(self, shape=tuple(2 * s if s > 1 else 1 for s in self.shape))

    def deriv(self, X: np.ndarray, axis: int) -> np.ndarray:
        """Periodic derivative of ``X`` (grid axes trailing) along chart axis ``axis``."""
        if self.shape[axis] == 1:
            return np.zeros_like(X)
        ax = X.ndim - self.dim + axis
        h = self.spacing[axis]
        if self.derivative == "spectral":
            s = self.shape[axis]
            k = 2j * np.pi * np.fft.fftfreq(s, d=h)
            if s % 2 == 0:
                k[s // 2] = 0.0
            shp = [1] * X.ndim
            shp[ax] = s
            return np.real(np.fft.ifft(np.fft.fft(X, axis=ax) * k.reshape(shp), axis=ax))
        r = lambda k: np.roll(X, -k, axis=ax)  # noqa: E731  r(k)[i] = X[i + k]
        return (8.0 * (r(1) - r(-1)) - (r(2) - r(-2))) / (12.0 * h)

    def integrate(self, F: np.ndarray) -> float:
        """Periodic trapezoid (plain sum times cell size) over the trailing grid axes."""
        return float(np.sum(F, axis=tuple(range(F.ndim - self.dim, F.ndim))) * self.cell)

    def integrate_with_error(self, F: np.ndarray) -> tuple[float, float]:
        """Integral and the difference to the same rule on every second node (where possible)."""
        full = self.integrate(F)
        sl = [slice(None)] * F.ndim
        coarse_cell = self.cell
        ok = False
        for k in self.active:
            if self.shape[k] % 2 == 0:
                sl[F.ndim - self.dim + k] = slice(None, None, 2)
                coarse_cell *= 2
                ok = True
        if not ok:
            return full, float("nan")
        coarse = float(np.sum(F[tuple(sl)]) * coarse_cell)
        return full, abs(full - coarse)


# ---------------------------------------------------------------------------
# state


@dataclass
class FrameField:
    """Vielbeins ``F_h[i, I]``, ``F_v[a, A]`` (e_I = F_h[i, I] e_i) with signatures ``eta_h``, ``eta_v``."""

    F_h: np.ndarray
    F_v: np.ndarray
    eta_h: np.ndarray
    eta_v: np.ndarray

    def metric_h(self) -> np.ndarray:
        """g_ij reconstructed from ``g^{-1} = F eta F^T``."""
        return _inv(np.einsum("iI...,I,jI...->ij...", self.F_h, self.eta_h, self.F_h))

    def metric_v(self) -> np.ndarray:
        return _inv(np.einsum("aA...,A,bA...->ab...", self.F_v, self.eta_v, self.F_v))

    def coordinate_frame(self, N: np.ndarray) -> np.ndarray:
        """``Phi[I, mu] = e_I^mu`` (orthonormal index first); the v-row/h-column block is 0."""
        n, m = self.F_h.shape[0], self.F_v.shape[0]
        batch = self.F_h.shape[2:]
        Phi = np.zeros((n + m, n + m) + batch)
        Phi[:n, :n] = np.swapaxes(self.F_h, 0, 1)
        Phi[:n, n:] = -np.einsum("iI...,ai...->Ia...", self.F_h, N)
        Phi[n:, n:] = np.swapaxes(self.F_v, 0, 1)
        return Phi


@dataclass
class FlowState:
    """Sampled d-metric flow state.

    ``coupling`` is ``None`` (f not evolved), ``"F"`` (conserves int e^{-f} dV)
    or ``"W"`` (conserves int (4 pi tau)^{-(n+m)/2} e^{-f} dV).
    """

    grid: PeriodicGrid
    n: int
    m: int
    g: np.ndarray
    h: np.ndarray
    N: np.ndarray
    f: np.ndarray
    chi: float = 0.0
    tau: float = 1.0
    r: float = 0.0
    coupling: str | None = "F"
    frames: FrameField | None = None

    @property
    def dim(self) -> int:
        return self.n + self.m

    def copy(self, **kw) -> "FlowState":
        return replace(self, **kw)

    def snapshot(self) -> dict:
        out = {
            "chi": self.chi,
            "tau": self.tau,
            "r": self.r,
            "coupling": self.coupling,
            "shape": list(self.grid.shape),
            "g": self.g.tolist(),
            "h": self.h.tolist(),
            "f": self.f.tolist(),
        }
        return out


def _inv(A: np.ndarray) -> np.ndarray:
    Am = np.moveaxis(np.moveaxis(A, 0, -1), 0, -1)
    return np.moveaxis(np.moveaxis(np.linalg.inv(Am), -1, 0), -1, 0)


def _det(A: np.ndarray) -> np.ndarray:
    return np.linalg.det(np.moveaxis(np.moveaxis(A, 0, -1), 0, -1))


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + np.swapaxes(A, 0, 1))


def _initial_frames(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gm = np.moveaxis(np.moveaxis(g, 0, -1), 0, -1)
    lam, V = np.linalg.eigh(gm)
    sign = np.sign(lam)
    eta = sign.reshape(-1, sign.shape[-1])[0]
    if not np.all(sign == eta):
        raise DegenerationError("signature varies over the grid")
    F = V / np.sqrt(np.abs(lam))[..., None, :]
    return np.moveaxis(np.moveaxis(F, -1, 0), -1, 0), eta


def initial_state(
    metric: DMetric,
    grid: PeriodicGrid,
    f: ScalarField | str | float | None = None,
    tau0: float = 1.0,
    coupling: str | None = "F",
    normalize_f: bool = True,
    frames: bool = False,
) -> FlowState:
    """Sample a d-metric (and f) on the grid; optionally shift f so the conserved measure is 1."""
    ch = metric.chart
    if grid.dim != ch.dim:
        raise ValueError("grid dimension must match the chart")
    if coupling not in (None, "F", "W"):
        raise ValueError("coupling must be None, 'F' or 'W'")
    P = grid.points()
    G, H, N = (j.value for j in metric.jets(P, 0))
    if f is None:
        fv = np.zeros(grid.shape)
    else:
        if isinstance(f, str):
            f = ScalarField.parse(f, ch)
        fv = f(P) if isinstance(f, ScalarField) else np.full(grid.shape, float(f))
        fv = np.broadcast_to(fv, grid.shape).astype(float)
    st = FlowState(grid, ch.dim_h, ch.dim_v, G.copy(), H.copy(), N.copy(), fv.copy(), 0.0, float(tau0), 0.0, coupling)
    _check_blocks(st.g, st.h)
    if normalize_f and coupling is not None:
        st.f = st.f + np.log(total_measure(st))
    if frames:
        Fh, eh = _initial_frames(st.g)
        Fv, ev = _initial_frames(st.h)
        st.frames = FrameField(Fh, Fv, eh, ev)
    return st


def _check_blocks(g: np.ndarray, h: np.ndarray, ref: tuple | None = None) -> None:
    dg, dh = _det(g), _det(h)
    if not (np.all(np.isfinite(dg)) and np.all(np.isfinite(dh))):
        raise DegenerationError("non-finite metric block")
    if np.any(dg == 0) or np.any(dh == 0):
        raise DegenerationError("metric block lost invertibility")
    if ref is not None:
        if np.any(np.sign(dg) != ref[0]) or np.any(np.sign(dh) != ref[1]):
            raise DegenerationError("metric block determinant changed sign")


# ---------------------------------------------------------------------------
# geometry on the grid


@dataclass
class FlowGeometry:
    """Per-node canonical d-connection data of a state (tensor axes first, grid axes last)."""

    Gamma: np.ndarray
    ricci: np.ndarray
    scalar: np.ndarray
    Minv: np.ndarray
    vol: np.ndarray  # sqrt|det g det h|
    df: np.ndarray  # e_alpha f
    hess_f: np.ndarray  # D_alpha D_beta f
    lap_f: np.ndarray
    grad_f2: np.ndarray  # |D f|^2


def flow_geometry(st: FlowState, g: np.ndarray | None = None, h: np.ndarray | None = None, f=None) -> FlowGeometry:
    g = st.g if g is None else g
    h = st.h if h is None else h
    f = st.f if f is None else f
    n, m, N, gr = st.n, st.m, st.N, st.grid
    D = gr.deriv
    batch = gr.shape
    Gam = canonical_coefficients(g, h, N, D, n, m, batch)
    W, _ = anholonomy_from(N, D, n, m, batch)
    R = riemann_from(Gam, W, N, D, n, m)
    Ric = ricci_from(R)
    k = n + m
    Minv = np.zeros((k, k) + batch)
    Minv[:n, :n] = _inv(g)
    Minv[n:, n:] = _inv(h)
    sR = np.einsum("ab...,ab...->...", Minv, Ric)
    vol = np.sqrt(np.abs(_det(g) * _det(h)))
    ef = np.stack(adapted_derivatives(f, N, D, n, m), axis=0)
    eef = np.stack(adapted_derivatives(ef, N, D, n, m), axis=0)  # [a, b] = e_a e_b f
    Hf = eef - np.einsum("cba...,c...->ab...", Gam, ef)
    lap = np.einsum("ab...,ab...->...", Minv, Hf)
    g2 = np.einsum("ab...,a...,b...->...", Minv, ef, ef)
    return FlowGeometry(Gam, Ric, sR, Minv, vol, ef, Hf, lap, g2)


def total_volume(st: FlowState) -> float:
    return st.grid.integrate(np.sqrt(np.abs(_det(st.g) * _det(st.h))))


def _measure_density(st: FlowState, f: np.ndarray, tau: float) -> np.ndarray:
    w = np.exp(-f)
    if st.coupling == "W":
        w = w * (4.0 * np.pi * tau) ** (-0.5 * st.dim)
    return w


def total_measure(st: FlowState) -> float:
    """The integral conserved by the coupled system (1 after normalisation)."""
    vol = np.sqrt(np.abs(_det(st.g) * _det(st.h)))
    return st.grid.integrate(_measure_density(st, st.f, st.tau) * vol)


# ---------------------------------------------------------------------------
# stepping


def stability_bound(st: FlowState, geo: FlowGeometry | None = None) -> float:
    """Largest admissible ``dchi``: explicit-RK4 diffusion limit and a curvature-rate limit."""
    geo = geo or flow_geometry(st)
    gr = st.grid
    if not gr.active:
        k2 = 0.0
    elif gr.derivative == "fd4":
        k2 = sum((_FD4_SYMBOL / gr.spacing[k]) ** 2 for k in gr.active)
    else:
        k2 = sum((np.pi / gr.spacing[k]) ** 2 for k in gr.active)
    Mi = np.moveaxis(np.moveaxis(geo.Minv, 0, -1), 0, -1)
    nu = float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (Mi + np.swapaxes(Mi, -1, -2))))))
    diff = _RK4_REAL_STABILITY / (2.0 * nu * k2) if k2 > 0 else np.inf
    rate = float(np.max(np.abs(np.einsum("ab...,bc...->ac...", geo.Minv, geo.ricci))))
    react = 0.25 / rate if rate > 0 else np.inf
    return float(min(diff, react))


def _rhs(st: FlowState, g, h, f, tau, normalized: bool, normalization: str, frames):
    geo = flow_geometry(st, g, h, f)
    n, m = st.n, st.m
    Ric = geo.ricci
    dg = -2.0 * _sym(Ric[:n, :n])
    dh = -2.0 * _sym(Ric[n:, n:])
    r = 0.0
    if normalized:
        r = st.grid.integrate(geo.scalar * geo.vol) / st.grid.integrate(geo.vol)
        k = 5.0 if normalization == "printed" else float(n + m)
        dg = dg + (2.0 * r / k) * g
        dh = dh + (2.0 * r / k) * h
    if st.coupling is None:
        df = np.zeros_like(f)
    else:
        df = -geo.lap_f + geo.grad_f2 - geo.scalar
        if st.coupling == "W":
            df = df + (n + m) / (2.0 * tau)
    dF = None
    if frames is not None:
        Fh, Fv = frames
        # e_I evolves with +g^{-1} R_sym so that g^{-1} = F eta F^T follows the metric flow
        Ah = np.einsum("ij...,jk...->ik...", geo.Minv[:n, :n], _sym(Ric[:n, :n]))
        Av = np.einsum("ab...,bc...->ac...", geo.Minv[n:, n:], _sym(Ric[n:, n:]))
        if normalized:
            Ah = Ah - (r / k) * np.eye(n).reshape((n, n) + (1,) * st.grid.dim)
            Av = Av - (r / k) * np.eye(m).reshape((m, m) + (1,) * st.grid.dim)
        dF = (np.einsum("ij...,jI...->iI...", Ah, Fh), np.einsum("ab...,bA...->aA...", Av, Fv))
    return dg, dh, df, dF, r, geo


def flow_step(
    st: FlowState,
    dchi: float,
    normalized: bool = False,
    normalization: str = "dimension",
    check_stability: bool = True,
) -> FlowState:
    """One classical RK4 step of the (coupled) flow; frames are advanced too when present."""
    if not dchi > 0:
        raise StabilityError("dchi must be positive")
    if normalization not in ("dimension", "printed"):
        raise ValueError("normalization must be 'dimension' or 'printed'")
    if st.coupling == "W" and st.tau - dchi <= 0:
        raise StabilityError("tau would become nonpositive")
    ref = (np.sign(_det(st.g)), np.sign(_det(st.h)))
    fr0 = (st.frames.F_h, st.frames.F_v) if st.frames is not None else None

    def stage(g, h, f, tau, fr):
        return _rhs(st, g, h, f, tau, normalized, normalization, fr)

    k1 = stage(st.g, st.h, st.f, st.tau, fr0)
    if check_stability:
        bound = stability_bound(st, k1[5])
        if dchi > bound:
            raise StabilityError(f"dchi = {dchi:g} exceeds the stability bound {bound:.3g}")

    def adv(k, c):
        g = st.g + c * dchi * k[0]
        h = st.h + c * dchi * k[1]
        f = st.f + c * dchi * k[2]
        fr = None if fr0 is None else (fr0[0] + c * dchi * k[3][0], fr0[1] + c * dchi * k[3][1])
        return g, h, f, st.tau - c * dchi, fr

    k2 = stage(*adv(k1, 0.5))
    k3 = stage(*adv(k2, 0.5))
    k4 = stage(*adv(k3, 1.0))
    w = dchi / 6.0
    comb = lambda i: w * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i])  # noqa: E731
    g = _sym(st.g + comb(0))
    h = _sym(st.h + comb(1))
    f = st.f + comb(2)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h)) and np.all(np.isfinite(f))):
        raise StabilityError("non-finite values after the step; reduce dchi")
    _check_blocks(g, h, ref)
    frames = None
    if fr0 is not None:
        Fh = fr0[0] + w * (k1[3][0] + 2 * k2[3][0] + 2 * k3[3][0] + k4[3][0])
        Fv = fr0[1] + w * (k1[3][1] + 2 * k2[3][1] + 2 * k3[3][1] + k4[3][1])
        frames = FrameField(Fh, Fv, st.frames.eta_h, st.frames.eta_v)
    return st.copy(g=g, h=h, f=f, chi=st.chi + dchi, tau=st.tau - dchi, r=k1[4], frames=frames)


def evolve_frames(st: FlowState, dchi: float, normalized: bool = False) -> FlowState:
    """Advance metric and vielbeins together (vielbeins initialised from the metric if absent)."""
    if st.frames is None:
        Fh, eh = _initial_frames(st.g)
        Fv, ev = _initial_frames(st.h)
        st = st.copy(frames=FrameField(Fh, Fv, eh, ev))
    return flow_step(st, dchi, normalized)


# ---------------------------------------------------------------------------
# functionals


@dataclass
class FunctionalReport:
    """Perelman-type functionals and thermodynamic analogues with quadrature error estimates.

    ``lambda_hat`` is F evaluated at the state's f (an upper bound of the infimum).
    ``entropy`` is ``-W``; ``entropy_spectral`` is the conformal-curvature
    expression of the same quantity, reported separately.
    """

    F_hat: float
    W_hat: float
    lambda_hat: float
    energy: float
    entropy: float
    entropy_spectral: float
    fluctuation: float
    logZ: float
    volume: float
    measure: float
    errors: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in (
            "F_hat", "W_hat", "lambda_hat", "energy", "entropy", "entropy_spectral",
            "fluctuation", "logZ", "volume", "measure")}
        d["errors"] = dict(self.errors)
        return d


def _norm2(A: np.ndarray, gi: np.ndarray) -> np.ndarray:
    """g^{ik} g^{jl} A_ij A_kl."""
    return np.einsum("ik...,jl...,ij...,kl...->...", gi, gi, A, A)


def fluctuation_integrand(st: FlowState, geo: FlowGeometry, shift: float | None) -> np.ndarray:
    """|R_ij + D_iD_jf - s g_ij|^2 + |R_ab + D_aD_bf - s g_ab|^2 with s = shift (None -> 0)."""
    n = st.n
    s = 0.0 if shift is None else shift
    A = geo.ricci + geo.hess_f
    Ah = A[:n, :n] - s * st.g
    Av = A[n:, n:] - s * st.h
    return _norm2(Ah, geo.Minv[:n, :n]) + _norm2(Av, geo.Minv[n:, n:])


def _conformal_scalar(st: FlowState) -> np.ndarray:
    w = np.exp(-st.f)
    return flow_geometry(st, w * st.g, w * st.h).scalar


def _values(st: FlowState) -> dict:
    if not st.tau > 0:
        raise QuadratureError("functionals need tau > 0")
    gr = st.grid
    geo = flow_geometry(st)
    k, tau, f = st.dim, st.tau, st.f
    dV = geo.vol
    mu = (4.0 * np.pi * tau) ** (-0.5 * k) * np.exp(-f)
    sRc = _conformal_scalar(st)
    v = {
        "F_hat": gr.integrate((geo.scalar + geo.grad_f2) * np.exp(-f) * dV),
        "W_hat": gr.integrate((tau * (geo.scalar + geo.grad_f2) + f - k) * mu * dV),
        "energy": -(tau**2) * gr.integrate((sRc + 3.0 * geo.grad_f2 - k / (2.0 * tau)) * mu * dV),
        "entropy_spectral": -gr.integrate((tau * (sRc - 3.0 * np.exp(f) * geo.grad_f2) + f - k) * mu * dV),
        "fluctuation": 2.0 * tau**2 * gr.integrate(fluctuation_integrand(st, geo, 1.0 / (2.0 * tau)) * mu * dV),
        "logZ": gr.integrate((-f + 0.5 * k) * mu * dV),
        "volume": gr.integrate(dV),
        "measure": gr.integrate(_measure_density(st, f, tau) * dV),
    }
    for name, val in v.items():
        if not np.isfinite(val):
            raise QuadratureError(f"non-finite integrand for {name}")
    v["entropy"] = -v["W_hat"]
    v["lambda_hat"] = v["F_hat"]
    return v


def coarsen(st: FlowState) -> FlowState | None:
    """The state sampled on every second node of each even active axis (None if impossible)."""
    gr = st.grid
    axes = [k for k in gr.active if gr.shape[k] % 2 == 0 and gr.shape[k] // 2 >= 5]
    if not axes:
        return None
    shape = tuple(s // 2 if k in axes else s for k, s in enumerate(gr.shape))
    cg = replace(gr, shape=shape)
    sl = tuple(slice(None, None, 2) if k in axes else slice(None) for k in range(gr.dim))
    pick = lambda A: np.ascontiguousarray(A[(Ellipsis,) + sl])  # noqa: E731
    fr = None
    if st.frames is not None:
        fr = FrameField(pick(st.frames.F_h), pick(st.frames.F_v), st.frames.eta_h, st.frames.eta_v)
    return st.copy(grid=cg, g=pick(st.g), h=pick(st.h), N=pick(st.N), f=pick(st.f), frames=fr)


def functionals(st: FlowState, estimate_error: bool = True) -> FunctionalReport:
    """F, W, lambda, <E>, S, sigma and log Z by periodic quadrature with mu = (4 pi tau)^{-k/2} e^{-f}.

    The error estimate of each value is its change when the whole evaluation
    (differencing and quadrature) is repeated on the 2x coarser subgrid; it
    bounds the discretisation error of the current grid from above.
    """
    v = _values(st)
    errs = {}
    if estimate_error:
        cs = coarsen(st)
        if cs is not None:
            vc = _values(cs)
            errs = {k: abs(v[k] - vc[k]) for k in v}
        else:
            errs = {k: float("nan") for k in v}
    return FunctionalReport(errors=errs, **v)


def _F_rhs(st: FlowState) -> float:
    geo = flow_geometry(st)
    return 2.0 * st.grid.integrate(fluctuation_integrand(st, geo, None) * np.exp(-st.f) * geo.vol)


def _W_rhs(st: FlowState) -> float:
    geo = flow_geometry(st)
    mu = (4.0 * np.pi * st.tau) ** (-0.5 * st.dim) * np.exp(-st.f)
    I = fluctuation_integrand(st, geo, 1.0 / (2.0 * st.tau))
    return 2.0 * st.tau * st.grid.integrate(I * mu * geo.vol)


@dataclass
class ProbeReport:
    chi: np.ndarray
    lhs: np.ndarray  # central-difference derivative of the functional
    rhs: np.ndarray
    rel_err: np.ndarray
    nonnegative: bool
    max_rel_err: float

    def passed(self, tol: float) -> bool:
        return self.nonnegative and self.max_rel_err < tol


def monotonicity_probe(states: Sequence[FlowState], functional: str = "F") -> ProbeReport:
    """Compare dF/dchi (or dW/dchi) by central differences with the monotonicity integral."""
    if len(states) < 3:
        raise ValueError("need at least 3 consecutive states")
    if functional not in ("F", "W"):
        raise ValueError("functional must be 'F' or 'W'")
    vals = []
    for s in states:
        rep = functionals(s, estimate_error=False)
        vals.append(rep.F_hat if functional == "F" else rep.W_hat)
    chis = np.array([s.chi for s in states])
    lhs, rhs, mids = [], [], []
    for i in range(1, len(states) - 1):
        lhs.append((vals[i + 1] - vals[i - 1]) / (chis[i + 1] - chis[i - 1]))
        rhs.append(_F_rhs(states[i]) if functional == "F" else _W_rhs(states[i]))
        mids.append(chis[i])
    lhs, rhs = np.array(lhs), np.array(rhs)
    rel = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-12)
    rel = np.where((np.abs(lhs) < 1e-12) & (np.abs(rhs) < 1e-12), 0.0, rel)
    return ProbeReport(np.array(mids), lhs, rhs, rel, bool(np.all(rhs >= 0)), float(np.max(rel)))


# ---------------------------------------------------------------------------
# driver


TRACE_COLUMNS = ("chi", "F_hat", "W_hat", "energy", "entropy", "fluctuation", "volume")


def run_flow(
    st: FlowState,
    chi_end: float,
    dchi: float,
    normalized: bool = False,
    normalization: str = "dimension",
    trace_csv: str | Path | None = None,
    snapshot_dir: str | Path | None = None,
    snapshot_every: int = 0,
) -> tuple[FlowState, list[dict], list[FlowState]]:
    """Integrate to ``chi_end``; returns the final state, trace rows and all states."""
    nsteps = int(round((chi_end - st.chi) / dchi))
    if nsteps < 0:
        raise ValueError("chi_end is before the current chi")
    states = [st]
    rows = []

    def record(s: FlowState):
        rep = functionals(s, estimate_error=False)
        rows.append({"chi": s.chi, "F_hat": rep.F_hat, "W_hat": rep.W_hat, "energy": rep.energy,
                     "entropy": rep.entropy, "fluctuation": rep.fluctuation, "volume": rep.volume})

    record(st)
    if snapshot_dir is not None:
        Path(snapshot_dir).mkdir(parents=True, exist_ok=True)
    for k in range(1, nsteps + 1):
        st = flow_step(st, dchi, normalized, normalization)
        states.append(st)
        record(st)
        if snapshot_dir is not None and snapshot_every and k % snapshot_every == 0:
            Path(snapshot_dir, f"state_{k:05d}.json").write_text(json.dumps(st.snapshot()))
    if trace_csv is not None:
        with open(trace_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(TRACE_COLUMNS))
            w.writeheader()
            for r in rows:
                w.writerow({c: repr(float(r[c])) for c in TRACE_COLUMNS})
    return st, rows, states
