"""Anholonomic deformation method: generating exact off-diagonal solutions.

Metrics of the ansatz class

    g = g_1(x) dx1^2 + g_2(x) dx2^2 + h_3(x,v) (e^3)^2 + h_4(x,v) (e^4)^2,
    e^3 = dv + w_i(x,v) dx^i,   e^4 = dy4 + n_i(x,v) dx^i,

with coordinates u = (x1, x2, v, y4) are assembled from generating data and
checked against the decoupled canonical-d-connection Einstein equations.
Notation: ``a.`` = d/dx1, ``a'`` = d/dx2, ``a*`` = d/dv.

The reduced equations used here (all verified symbolically, see the tests):

* R^1_1 = R^2_2 = -Y4      with R^1_1 from g_1, g_2 only;
* S^3_3 = S^4_4 = -Y2      S = [h4* (ln sqrt|h3 h4|)* - h4**] / (2 h3 h4);
* R_3i = -(h4*/2h4) (d_i phi - w_i phi*),  phi = ln |h4* / sqrt|h3 h4||;
* R_4i = -(h4/2h3) [n_i** + (3h4*/2h4 - h3*/2h3) n_i*].

Consequently the generator uses 1/|s| = 1/|s0| + 2 e3 h0^2 int Y2 f*(f-f0) dv,
w_i = d_i phi / phi* and n_i = 1n_i + 2n_i int f* sqrt|s| (f-f0)^-3 dv; the
alternative ``rule="printed"`` keeps the literal recipe for comparison.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import optimize

from . import quadrature
from .connections import CANONICAL, LEVI_CIVITA, curvature_batch, curvature_from_jets
from .errors import (
    AnsatzShapeError,
    BranchError,
    CompatibilityError,
    DivisionError,
    DomainError,
    GeneratorDegeneracyError,
    PsiResidualError,
    RadicandSignError,
)
from .fields import Box, Chart, Jet, ScalarField, absolute, evaluate, exp, log, sin, sqrt
from .geometry import DMetric, NConnection, _as_field, as_points, blockdiag
from .quadrature import DEFAULT_TOL, simpson, simpson_unit

__all__ = [
    "GeneratingData",
    "EquationResidual",
    "ResidualReport",
    "RotoidParams",
    "SolitonField",
    "FinslerData",
    "FinslerReencoding",
    "grid_points",
    "sigma_field",
    "sigma_profile",
    "generate_metric",
    "harmonic_psi",
    "residual_ep1a",
    "check_levi_civita_conditions",
    "einstein_residual",
    "schwarzschild_prime",
    "nc_polarize_schwarzschild",
    "nc_schwarzschild_gamma",
    "lower_gamma_32",
    "rotoid_metric",
    "rotoid_horizon",
    "aux41_residual",
    "soliton_residual",
    "finsler_reencode",
    "simpson",
    "simpson_unit",
]

GENERATOR_CHART = Chart(2, 2, ("x1", "x2", "v", "y4"))
SPHERICAL_SIGNATURE = (-1, -1, -1, 1)
_V = 2  # vertical coordinate carrying the anisotropy


def grid_points(bounds: Sequence[tuple[float, float]], shape: Sequence[int]) -> np.ndarray:
    """Tensor grid (npts, d); an axis with ``shape`` 1 sits at its lower bound."""
    axes = [np.linspace(lo, hi, k) if k > 1 else np.array([lo]) for (lo, hi), k in zip(bounds, shape)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def _is_zero(f: ScalarField) -> bool:
    from .fields import _Const

    return isinstance(f.node, _Const) and f.node.value == 0.0


# ---------------------------------------------------------------------------
# generating data


@dataclass
class GeneratingData:
    """Inputs of the generator; fields may be ScalarFields, expressions or numbers.

    ``domain`` lists (lo, hi) for x1, x2, v and is sampled to check the
    preconditions; ``v0`` is the quadrature base point (default: lower v edge).
    ``w_vacuum`` are the (arbitrary) w_i used when Y2 vanishes identically.
    """

    psi: object = 0.0
    f: object = "v"
    f0: object = 0.0
    h0: object = 1.0
    sigma0: object = 1.0
    n1k: Sequence = (0.0, 0.0)
    n2k: Sequence = (0.0, 0.0)
    Y2: object = 0.0
    Y4: object = 0.0
    eps: Sequence[int] = (1, 1, 1, 1)
    theta: float = 0.0
    domain: Sequence[tuple[float, float]] | None = None
    v0: float | None = None
    w_vacuum: Sequence = (0.0, 0.0)
    rule: str = "exact"
    quad_tol: float = DEFAULT_TOL
    chart: Chart = GENERATOR_CHART
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        ch = self.chart
        if ch.dim_h != 2 or ch.dim_v != 2:
            raise AnsatzShapeError("the generator works on 2+2 dimensional charts")
        if len(self.eps) != 4 or any(e not in (1, -1) for e in self.eps):
            raise ValueError("eps must be four signs +-1")
        if self.rule not in ("exact", "printed"):
            raise ValueError("rule must be 'exact' or 'printed'")
        prm = dict(self.params)
        if self.theta:
            prm.setdefault("theta", float(self.theta))
        conv = lambda x: ScalarField.parse(x, ch, prm) if isinstance(x, str) else _as_field(x, ch)
        for name in ("psi", "f", "f0", "h0", "sigma0", "Y2", "Y4"):
            setattr(self, name, conv(getattr(self, name)))
        self.n1k = tuple(conv(x) for x in self.n1k)
        self.n2k = tuple(conv(x) for x in self.n2k)
        self.w_vacuum = tuple(conv(x) for x in self.w_vacuum)
        if self.v0 is None:
            self.v0 = float(self.domain[2][0]) if self.domain is not None else 0.0
        for name in ("psi", "f0", "h0", "sigma0", "Y4") + ("n1k", "n2k"):
            items = getattr(self, name)
            for fld in items if isinstance(items, tuple) else (items,):
                if fld.depends_on(_V) or fld.depends_on(3):
                    raise AnsatzShapeError(f"{name} must depend on x only")
        if self.Y2.depends_on(3) or self.f.depends_on(3):
            raise AnsatzShapeError("Y2 and f must not depend on the fourth coordinate")

    @property
    def vacuum(self) -> bool:
        return _is_zero(self.Y2)

    def sample(self, k: int = 5) -> np.ndarray:
        if self.domain is None:
            raise ValueError("GeneratingData.domain is needed for sampling")
        return grid_points(list(self.domain) + [(0.0, 0.0)], (k, k, k, 1))


def _strength(gen: GeneratingData) -> ScalarField:
    """I = int_{v0}^{v} Y2 f* (f - f0) dv, in closed form when Y2 is v-independent."""
    F = gen.f - gen.f0
    if not gen.Y2.depends_on(_V):
        F0 = gen.f.at(_V, gen.v0) - gen.f0
        return 0.5 * gen.Y2 * (F * F - F0 * F0)
    return (gen.Y2 * gen.f.diff(_V) * F).integrate(_V, gen.v0, gen.quad_tol)


def sigma_field(gen: GeneratingData) -> ScalarField:
    """The polarization s(x, v) as a field (identically 1 for vacuum data)."""
    ch = gen.chart
    if gen.vacuum:
        return ScalarField.constant(1.0, ch)
    e3 = gen.eps[2]
    I = _strength(gen)
    if gen.rule == "printed":
        return gen.sigma0 - (e3 / 8.0) * gen.h0 * gen.h0 * I
    return 1.0 / (1.0 / absolute(gen.sigma0) + 2.0 * e3 * gen.h0 * gen.h0 * I)


def sigma_profile(gen: GeneratingData, x, v):
    """Evaluate s at horizontal point(s) ``x`` (shape (2,) or (npts, 2)) and ``v``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.broadcast_to(np.asarray(v, dtype=float), (x.shape[0],))
    pts = np.stack([x[:, 0], x[:, 1], v, np.zeros_like(v)])
    out = sigma_field(gen).jet(pts, 0, gen.quad_tol).value
    return float(out[0]) if out.size == 1 else out


def harmonic_psi(coefficients: Mapping[tuple[str, int], float], chart: Chart = GENERATOR_CHART, eps=(1, 1)) -> ScalarField:
    """psi with e1 psi.. + e2 psi'' = 0 from harmonic primitives.

    For e1 = e2 keys are ("re", k) / ("im", k): Re/Im (x1 + i x2)^k.
    For e1 = -e2 keys are ("plus", k) / ("minus", k): (x1 + x2)^k, (x1 - x2)^k.
    """
    x1, x2 = ScalarField.coordinate(0, chart), ScalarField.coordinate(1, chart)
    out = ScalarField.constant(0.0, chart)
    for (kind, k), c in coefficients.items():
        if kind in ("re", "im"):
            if eps[0] != eps[1]:
                raise ValueError("re/im primitives need e1 == e2")
            re, im = ScalarField.constant(1.0, chart), ScalarField.constant(0.0, chart)
            for _ in range(k):
                re, im = re * x1 - im * x2, re * x2 + im * x1
            out = out + c * (re if kind == "re" else im)
        elif kind in ("plus", "minus"):
            if eps[0] == eps[1]:
                raise ValueError("plus/minus primitives need e1 == -e2")
            out = out + c * (x1 + x2 if kind == "plus" else x1 - x2) ** float(k)
        else:
            raise ValueError(f"unknown harmonic primitive {kind!r}")
    return out


def _n_integral(gen: GeneratingData, sigma: ScalarField) -> ScalarField:
    F = gen.f - gen.f0
    fs = gen.f.diff(_V)
    if gen.rule == "printed":
        return (fs * fs * sigma / F**3).integrate(_V, gen.v0, gen.quad_tol)
    if not sigma.depends_on(_V):
        F0 = gen.f.at(_V, gen.v0) - gen.f0
        return -0.5 * sqrt(absolute(sigma)) * (F ** (-2.0) - F0 ** (-2.0))
    return (fs * sqrt(absolute(sigma)) / F**3).integrate(_V, gen.v0, gen.quad_tol)


def generate_metric(gen: GeneratingData, check: bool = True, psi_tol: float = 1e-8) -> DMetric:
    """Assemble the exact solution; ``check`` samples the declared domain first."""
    ch = gen.chart
    e1, e2, e3, e4 = gen.eps
    sigma = sigma_field(gen)
    F = gen.f - gen.f0
    fs = gen.f.diff(_V)
    g = [e1 * exp(gen.psi), e2 * exp(gen.psi)]
    h = [e3 * gen.h0 * gen.h0 * fs * fs * absolute(sigma), e4 * F * F]
    if gen.vacuum:
        w = list(gen.w_vacuum)
    elif gen.rule == "printed":
        w = [-sigma.diff(i) / sigma.diff(_V) for i in range(2)]
    else:
        phi = -log(absolute(gen.h0)) - 0.5 * log(absolute(sigma))
        w = [phi.diff(i) / phi.diff(_V) for i in range(2)]
    K = _n_integral(gen, sigma)
    n = [gen.n1k[i] + gen.n2k[i] * K for i in range(2)]
    if check and gen.domain is not None:
        _check_generator(gen, sigma, psi_tol)
    return DMetric.diagonal(g, h, NConnection([w, n], ch), ch)


def _check_generator(gen: GeneratingData, sigma: ScalarField, psi_tol: float) -> None:
    pts = gen.sample().T
    e1, e2 = gen.eps[:2]
    fj, f0, psi, Y4, h0 = evaluate([gen.f, gen.f0, gen.psi, gen.Y4, gen.h0], pts, 2, gen.quad_tol)
    fs = fj.partial((_V,))
    if np.any(np.abs(fs) < 1e-12):
        raise GeneratorDegeneracyError("f* vanishes on the domain")
    if np.any(np.abs(fj.value - f0.value) < 1e-12):
        raise GeneratorDegeneracyError("f = f0 somewhere on the domain")
    lap = e1 * psi.partial((0, 0)) + e2 * psi.partial((1, 1))
    res = np.max(np.abs(lap - 2.0 * np.exp(psi.value) * Y4.value))
    if res > psi_tol:
        raise PsiResidualError(f"psi equation residual {res:.3e} exceeds {psi_tol:g}")
    if gen.vacuum:
        if np.max(np.abs(h0.partial((0,))) + np.abs(h0.partial((1,)))) > 1e-12:
            raise GeneratorDegeneracyError("vacuum data need a constant h0")
        return
    sj = sigma.jet(pts, 1, gen.quad_tol)
    if np.any(~np.isfinite(sj.value)) or np.any(sj.value <= 0) and gen.rule == "exact":
        raise GeneratorDegeneracyError("polarization s changes sign (pole) on the domain")
    if np.any(np.abs(sj.partial((_V,))) < 1e-14):
        raise DivisionError("s* vanishes on the domain while Y2 != 0")


# ---------------------------------------------------------------------------
# residual reports


@dataclass
class EquationResidual:
    equation_id: str
    max_abs: float
    rms: float
    n_points: int
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_abs <= self.tol)

    def to_dict(self) -> dict:
        return {
            "equation_id": self.equation_id,
            "max_abs": float(self.max_abs),
            "rms": float(self.rms),
            "n_points": int(self.n_points),
            "tol": float(self.tol),
            "pass": self.passed,
        }


@dataclass
class ResidualReport:
    entries: list[EquationResidual]
    quad_tol: float | None = None
    n_points: int = 0
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_abs(self) -> float:
        return max((e.max_abs for e in self.entries), default=0.0)

    def __getitem__(self, equation_id: str) -> EquationResidual:
        for e in self.entries:
            if e.equation_id == equation_id:
                return e
        raise KeyError(equation_id)

    def to_json(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)


class _Acc:
    """Running max / sum-of-squares per equation id."""

    def __init__(self):
        self.mx: dict[str, float] = {}
        self.ss: dict[str, float] = {}
        self.cnt: dict[str, int] = {}

    def add(self, key: str, arr: np.ndarray, mask: np.ndarray | None = None) -> None:
        a = np.abs(np.asarray(arr, dtype=float))
        a = a.reshape(-1, a.shape[-1]) if a.ndim > 1 else a.reshape(1, -1)
        if mask is not None:
            a = a[:, mask]
        self.mx[key] = max(self.mx.get(key, 0.0), float(a.max()) if a.size else 0.0)
        self.ss[key] = self.ss.get(key, 0.0) + float((a**2).sum())
        self.cnt[key] = self.cnt.get(key, 0) + a.size

    def report(self, tols: Mapping[str, float], npts: int, **kw) -> ResidualReport:
        out = []
        for key in self.mx:
            rms = math.sqrt(self.ss[key] / self.cnt[key]) if self.cnt[key] else 0.0
            out.append(EquationResidual(key, self.mx[key], rms, npts, tols[key]))
        return ResidualReport(out, n_points=npts, **kw)


def _chunks(p: np.ndarray, size: int):
    for s in range(0, p.shape[1], size):
        yield p[:, s : s + size]


def _ansatz_check(G: Jet, H: Jet, N: Jet, tol: float = 1e-10) -> None:
    def big(x):
        return np.max(np.abs(x)) > tol * (1.0 + np.max(np.abs(G.value)) + np.max(np.abs(H.value)))

    if big(G.value[0, 1]) or big(G.value[1, 0]) or big(H.value[0, 1]) or big(H.value[1, 0]):
        raise AnsatzShapeError("metric blocks must be diagonal")
    if big(G.partial((_V,))) or big(G.partial((3,))):
        raise AnsatzShapeError("g_i must depend on x only")
    if big(H.partial((3,))) or big(N.partial((3,))):
        raise AnsatzShapeError("coefficients must not depend on the fourth coordinate")


def _reduced(G: Jet, H: Jet, N: Jet, Y2, Y4):
    """Reduced residual families and the mask of points where h4* != 0."""
    P = lambda J, *ax: J.partial(ax)
    g1, g2, h3, h4 = G[0, 0], G[1, 1], H[0, 0], H[1, 1]
    G1, G2 = g1.value, g2.value
    R11 = (
        P(g1, 0) * P(g2, 0) / (2 * G1)
        + P(g2, 0) ** 2 / (2 * G2)
        - P(g2, 0, 0)
        + P(g1, 1) * P(g2, 1) / (2 * G2)
        + P(g1, 1) ** 2 / (2 * G1)
        - P(g1, 1, 1)
    ) / (2 * G1 * G2)
    H3, H4 = h3.value, h4.value
    h3s, h4s, h4ss = P(h3, _V), P(h4, _V), P(h4, _V, _V)
    mask = np.abs(h4s) > 1e-12 * (1.0 + np.abs(H4))
    with np.errstate(divide="ignore", invalid="ignore"):
        S = (h4s * 0.5 * (h3s / H3 + h4s / H4) - h4ss) / (2 * H3 * H4)
        R3, R4 = [], []
        dphi = lambda ax: P(h4, _V, ax) / h4s - 0.5 * (P(h3, ax) / H3 + P(h4, ax) / H4)
        phis = dphi(_V)
        gam = 1.5 * h4s / H4 - 0.5 * h3s / H3
        for i in range(2):
            w, n = N[0, i], N[1, i]
            R3.append(-(h4s / (2 * H4)) * (dphi(i) - w.value * phis))
            R4.append(-(H4 / (2 * H3)) * (P(n, _V, _V) + gam * P(n, _V)))
    return {
        "ep1a.R11": R11 + Y4,
        "ep1a.S33": S + Y2,
        "ep1a.R3i": np.array(R3),
        "ep1a.R4i": np.array(R4),
    }, mask


def _general(G: Jet, H: Jet, N: Jet, Y2, Y4, kind: str = CANONICAL):
    _, _, Ric, sR = curvature_from_jets(G, H, N, kind, 2, 2)
    batch = G.shape[2:]
    M = blockdiag(G.value, H.value, 2, 2, batch)
    Minv = np.moveaxis(np.linalg.inv(np.moveaxis(M, (0, 1), (-2, -1))), (-2, -1), (0, 1))
    E = np.einsum("ag...,gb...->ab...", Minv, Ric)
    E = E - 0.5 * sR * np.eye(4).reshape(4, 4, *([1] * len(batch)))
    eye2 = np.eye(2).reshape(2, 2, *([1] * len(batch)))
    return {
        "einstein.hh": E[:2, :2] - Y2 * eye2,
        "einstein.vv": E[2:, 2:] - Y4 * eye2,
        "einstein.vh": Ric[2:, :2],
        "einstein.hv": Ric[:2, 2:],
    }, E, Ric


def residual_ep1a(
    m: DMetric,
    Y2,
    Y4,
    grid,
    tol: float = 1e-7,
    quad_tol: float | None = DEFAULT_TOL,
    chunk: int = 128,
) -> ResidualReport:
    """Reduced and general residuals of the decoupled equations; pass iff both hold.

    The extra entry ``dual_path`` compares the two evaluations component by
    component and is held to 10x ``tol``.
    """
    ch = m.chart
    Y2 = _as_field(Y2, ch)
    Y4 = _as_field(Y4, ch)
    p, _ = as_points(grid, ch.dim)
    acc = _Acc()
    skipped = 0
    for q in _chunks(p, chunk):
        G, H, N = m.jets(q, 2, quad_tol)
        _ansatz_check(G, H, N)
        y2, y4 = (j.value for j in evaluate([Y2, Y4], q, 0, quad_tol))
        red, mask = _reduced(G, H, N, y2, y4)
        gen, E, Ric = _general(G, H, N, y2, y4)
        skipped += int((~mask).sum())
        for k, v in red.items():
            acc.add(k, v, mask if k in ("ep1a.R3i", "ep1a.R4i", "ep1a.S33") else None)
        for k, v in gen.items():
            acc.add(k, v)
        dual = [
            red["ep1a.R11"] + (E[2, 2] - y4),
            red["ep1a.S33"] + (E[0, 0] - y2),
            red["ep1a.R3i"] - Ric[2, :2],
            red["ep1a.R4i"] - Ric[3, :2],
        ]
        acc.add("dual_path", np.concatenate([np.atleast_2d(d) for d in dual]), mask)
    tols = {k: tol for k in acc.mx}
    tols["dual_path"] = 10 * tol
    return acc.report(tols, p.shape[1], quad_tol=quad_tol, n_skipped=skipped)


def einstein_residual(m: DMetric, grid, kind: str = LEVI_CIVITA, tol: float = 1e-6, quad_tol=DEFAULT_TOL, chunk: int = 128) -> ResidualReport:
    """Vacuum Ricci residual of the chosen connection (frame components)."""
    p, _ = as_points(grid, m.chart.dim)
    acc = _Acc()
    for q in _chunks(p, chunk):
        _, _, Ric, _ = curvature_batch(m, q, kind, quad_tol)
        acc.add(f"ricci.{kind}", Ric)
    return acc.report({f"ricci.{kind}": tol}, p.shape[1], quad_tol=quad_tol)


def check_levi_civita_conditions(m: DMetric, grid, tol: float = 1e-8, quad_tol=DEFAULT_TOL, chunk: int = 128) -> ResidualReport:
    """Constraints selecting configurations where Levi-Civita = canonical d-connection.

    Reported entries:

    * ``lc.w_curl``  w1' - w2. + w2 w1* - w1 w2*  (the classical curl form);
    * ``lc.n_curl``  n1' - n2.;
    * ``lc.w_phi``   w_i phi* - d_i phi;
    * ``lc.omega_w`` e_2 w_1 - e_1 w_2 (N-connection curvature, e_i = d_i - w_i d_v);
    * ``lc.w_star``  w_i* - e_i ln sqrt|h3|;
    * ``lc.h4``      e_i ln |h4|.

    The last three together with n* = 0 and ``lc.n_curl`` are equivalent to a
    vanishing canonical torsion, hence sufficient for the two connections to
    coincide; the first three alone are not (see the tests).
    """
    ch = m.chart
    p, _ = as_points(grid, ch.dim)
    acc = _Acc()
    for q in _chunks(p, chunk):
        G, H, N = m.jets(q, 2, quad_tol)
        _ansatz_check(G, H, N)
        P = lambda J, *ax: J.partial(ax)
        n1, n2, w1, w2 = N[1, 0], N[1, 1], N[0, 0], N[0, 1]
        scale = 1.0 + np.max(np.abs(N.value[1]))
        if np.max(np.abs(P(n1, _V))) + np.max(np.abs(P(n2, _V))) > 1e-10 * scale:
            raise AnsatzShapeError("n_k must be independent of v for the Levi-Civita conditions")
        W1, W2 = w1.value, w2.value
        acc.add("lc.w_curl", P(w1, 1) - P(w2, 0) + W2 * P(w1, _V) - W1 * P(w2, _V))
        acc.add("lc.n_curl", P(n1, 1) - P(n2, 0))
        h3, h4 = H[0, 0], H[1, 1]
        H3, H4, h4s = h3.value, h4.value, P(h4, _V)
        with np.errstate(divide="ignore", invalid="ignore"):
            dphi = lambda ax: P(h4, _V, ax) / h4s - 0.5 * (P(h3, ax) / H3 + P(h4, ax) / H4)
            mask = np.abs(h4s) > 1e-12
            acc.add("lc.w_phi", np.array([w.value * dphi(_V) - dphi(i) for i, w in enumerate((w1, w2))]), mask)
        acc.add("lc.omega_w", (P(w1, 1) - W2 * P(w1, _V)) - (P(w2, 0) - W1 * P(w2, _V)))
        ws, h4e = [], []
        for i, w in enumerate((w1, w2)):
            ws.append(P(w, _V) - 0.5 * (P(h3, i) - w.value * P(h3, _V)) / H3)
            h4e.append((P(h4, i) - w.value * h4s) / H4)
        acc.add("lc.w_star", np.array(ws))
        acc.add("lc.h4", np.array(h4e))
    return acc.report({k: tol for k in acc.mx}, p.shape[1], quad_tol=quad_tol)


# ---------------------------------------------------------------------------
# Schwarzschild prime data and its noncommutative variants


def _spherical_chart(first: str = "r") -> Chart:
    return Chart(2, 2, (first, "theta", "phi", "t"), SPHERICAL_SIGNATURE)


def _horizon_band(alpha: float, theta: float, margin: float) -> float:
    mu0 = alpha / 2.0
    disc = mu0 * mu0 - theta
    r_plus = mu0 + math.sqrt(disc) if disc > 0 else 0.0
    return r_plus * (1.0 + margin)


def _radial_domain(chart: Chart, lo: float, hi: float) -> Box:
    inf = math.inf
    return Box((lo, -inf, -inf, -inf), (hi, inf, inf, inf))


_XI_POWER = {"proper": -1.0, "printed": 1.0}


def xi_of_r(r, alpha: float, theta: float = 0.0, r_ref: float | None = None, tol: float = 1e-13, xi_rule: str = "proper"):
    """xi(r) = r_ref + int_{r_ref}^r |varpi^2|^{p/2} dr with xi = r at r_ref.

    ``xi_rule="proper"`` (p = -1) is the proper radial distance, for which
    -dxi^2 - r^2 dOmega^2 + varpi^2 dt^2 is the (smeared) Schwarzschild metric;
    ``"printed"`` (p = +1) integrates |varpi| instead.
    """
    pw = _XI_POWER[xi_rule]
    r_ref = 3.0 * alpha if r_ref is None else r_ref
    w = lambda s: np.abs(1.0 - alpha / s + theta / s**2) ** (0.5 * pw)
    return r_ref + simpson(w, r_ref, np.asarray(r, dtype=float), tol=tol)


def _r_of_xi_series(xi: np.ndarray, K: int, alpha: float, theta: float, r_ref: float, xi_rule: str = "proper") -> list[np.ndarray]:
    """Derivatives d^k r / d xi^k (k <= K) at the given xi values."""
    pw = _XI_POWER[xi_rule]
    xi = np.asarray(xi, dtype=float)
    drdxi = lambda s: np.abs(1.0 - alpha / s + theta / s**2) ** (-0.5 * pw)
    r = xi.copy()
    for _ in range(60):
        step = (xi_of_r(r, alpha, theta, r_ref, xi_rule=xi_rule) - xi) * drdxi(r)
        r = r - step
        if np.max(np.abs(step)) < 1e-14 * (1 + np.max(np.abs(r))):
            break
    # Picard iteration on the Taylor coefficients of R' = |varpi(R)|^{-p}
    R = Jet(np.zeros((K + 1,) + r.shape), 1, K)
    R.c[0] = r
    for _ in range(K + 1):
        w2 = 1.0 - alpha * R.reciprocal() + theta * R.reciprocal() * R.reciprocal()
        U = (w2 * float(np.sign(w2.value.flat[0]))) ** (-0.5 * pw)
        c = np.zeros_like(R.c)
        c[0] = r
        for k in range(K):
            c[k + 1] = U.c[k] / (k + 1)
        R = Jet(c, 1, K)
    return [R.c[k] * math.factorial(k) for k in range(K + 1)]


def schwarzschild_prime(
    alpha: float,
    use_xi_coordinate: bool = False,
    theta: float = 0.0,
    r_range: tuple[float, float] | None = None,
    margin: float = 0.05,
    r_ref: float | None = None,
    xi_rule: str = "proper",
) -> DMetric:
    """Prime data (g1, g2, h3, h4) = (-1/varpi^2, -r^2, -r^2 sin^2, varpi^2), N = 0.

    varpi^2 = 1 - alpha/r + theta/r^2 (alpha = 2 mu0).  With ``use_xi_coordinate``
    the first coordinate is xi (see :func:`xi_of_r`) and g1 = -1.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    band = _horizon_band(alpha, theta, margin)
    lo, hi = r_range if r_range is not None else (band, math.inf)
    if lo < band:
        raise DomainError(f"radial domain [{lo}, {hi}] intersects the horizon band r <= {band:.6g}")
    if not use_xi_coordinate:
        ch = _spherical_chart("r")
        r = ScalarField.coordinate(0, ch)
        th = ScalarField.coordinate(1, ch)
        w2 = 1.0 - alpha / r + theta / (r * r)
        g = [-1.0 / w2, -(r * r)]
        h = [-(r * r) * sin(th) ** 2.0, w2]
        dom = _radial_domain(ch, lo, hi)
        return DMetric.diagonal([x.with_domain(dom) for x in g], [x.with_domain(dom) for x in h], None, ch)
    ch = _spherical_chart("xi")
    r_ref = 3.0 * alpha if r_ref is None else r_ref

    def r_fn(xi, *_):
        return xi.compose(_r_of_xi_series(xi.value, xi.K, alpha, theta, r_ref, xi_rule))

    r = ScalarField.from_callable(r_fn, ch)
    th = ScalarField.coordinate(1, ch)
    w2 = 1.0 - alpha / r + theta / (r * r)
    xlo = float(xi_of_r(lo, alpha, theta, r_ref, xi_rule=xi_rule)) if np.isfinite(lo) else -math.inf
    xhi = float(xi_of_r(hi, alpha, theta, r_ref, xi_rule=xi_rule)) if np.isfinite(hi) else math.inf
    dom = _radial_domain(ch, xlo, xhi)
    g = [ScalarField.constant(-1.0, ch), -(r * r)]
    h = [-(r * r) * sin(th) ** 2.0, w2]
    return DMetric.diagonal([x.with_domain(dom) for x in g], [x.with_domain(dom) for x in h], None, ch)


def polarization_corrections(alpha: float, chart: Chart | None = None) -> list[ScalarField]:
    """theta^2 coefficients (g1, g2, h3, h4) of the polarized Schwarzschild metric."""
    ch = chart or _spherical_chart("r")
    r = ScalarField.coordinate(0, ch)
    th = ScalarField.coordinate(1, ch)
    a = alpha
    return [
        -a * (4 * r - 3 * a) / (16 * r * r * (r - a) ** 2.0),
        -(2 * r * r - 17 * a * (r - a)) / (32 * r * (r - a)),
        -((r * r + a * r - a * a) * _cos(th) - a * (2 * r - a)) / (16 * r * (r - a)),
        -a * (8 * r - 11 * a) / (16 * r**4.0),
    ]


def _cos(x):
    from .fields import cos

    return cos(x)


def nc_polarize_schwarzschild(alpha: float, theta: float, r_range=None, margin: float = 0.05) -> DMetric:
    """Schwarzschild data plus theta^2 corrections; N = 0."""
    base = schwarzschild_prime(alpha, False, 0.0, r_range, margin)
    corr = polarization_corrections(alpha, base.chart)
    t2 = theta * theta
    dom = base.g[0][0].domain
    g = [(base.g[i][i] + t2 * corr[i]).with_domain(dom) for i in range(2)] if t2 else [base.g[i][i] for i in range(2)]
    h = [(base.h[a][a] + t2 * corr[2 + a]).with_domain(dom) for a in range(2)] if t2 else [base.h[a][a] for a in range(2)]
    return DMetric.diagonal(g, h, None, base.chart)


def lower_gamma_32(x, tol: float = 1e-13):
    """gamma(3/2, x) = int_0^x p^{1/2} e^{-p} dp via the smooth substitution p = t^2."""
    x = np.asarray(x, dtype=float)
    return simpson(lambda t: 2.0 * t * t * np.exp(-t * t), 0.0, np.sqrt(x), tol=tol)


@dataclass
class FluidSource:
    """Diagonal source T^alpha_beta = diag(-p1, -p_perp, -p_perp, rho) on (r, theta, phi, t)."""

    rho: ScalarField
    p1: ScalarField
    p_perp: ScalarField

    def diagonal(self) -> list[ScalarField]:
        return [-self.p1, -self.p_perp, -self.p_perp, self.rho]


def nc_schwarzschild_gamma(mu0: float, theta: float, r_range: tuple[float, float] | None = None, tol: float = 1e-13):
    """Gamma-function smeared Schwarzschild metric and its fluid source.

    h4 = 1 - 4 mu0 gamma(3/2, r^2/4theta) / (sqrt(pi) r); the incomplete gamma is an
    integral node in r (p = rho^2 / 4 theta), so radial jets are exact.
    """
    if theta <= 0:
        raise ValueError("theta must be positive")
    ch = _spherical_chart("r")
    r = ScalarField.coordinate(0, ch)
    th = ScalarField.coordinate(1, ch)
    integrand = r * r / (4.0 * theta**1.5) * exp(-(r * r) / (4.0 * theta))
    gam = integrand.integrate(0, 0.0, tol)
    h4 = 1.0 - 4.0 * mu0 * gam / (math.sqrt(math.pi) * r)
    rho = mu0 * exp(-(r * r) / (4.0 * theta)) / (4.0 * math.pi * theta) ** 1.5
    src = FluidSource(rho, -rho, -rho - 0.5 * r * rho.diff(0))
    if r_range is not None:
        lo, hi = r_range
        rs = np.linspace(lo, hi, 257)
        vals = h4(np.stack([rs, np.ones_like(rs), np.zeros_like(rs), np.zeros_like(rs)]))
        if np.any(np.sign(vals) != np.sign(vals[0])) or np.any(vals == 0):
            raise DomainError("the radial range contains a horizon (h4 = 0)")
        dom = _radial_domain(ch, lo, hi)
    else:
        dom = Box((0.0, -math.inf, -math.inf, -math.inf), (math.inf,) * 4)
    g = [(-1.0 / h4).with_domain(dom), (-(r * r)).with_domain(dom)]
    h = [(-(r * r) * sin(th) ** 2.0).with_domain(dom), h4.with_domain(dom)]
    return DMetric.diagonal(g, h, None, ch), src


# ---------------------------------------------------------------------------
# rotoid deformations and solitons


@dataclass
class RotoidParams:
    """h4 = q + thetabar s, q = 1 - 2 mu / r, mu = mu0 + thetabar mu1, s = q0/(4 mu^2) sin(omega0 phi + phi0).

    Fields live on the chart (xi, theta, phi, t); ``r`` is r(xi) (default r = xi).
    """

    mu0: float
    thetabar: float = 0.0
    omega0: float = 1.0
    phi0: float = 0.0
    q0: object = 1.0
    mu1: object = 0.0
    r: object = "xi"
    chart: Chart = field(default_factory=lambda: _spherical_chart("xi"))

    def __post_init__(self):
        if self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.thetabar < 0:
            raise ValueError("thetabar must be nonnegative")
        ch = self.chart
        conv = lambda x: ScalarField.parse(x, ch) if isinstance(x, str) else _as_field(x, ch)
        self.q0, self.mu1, self.r = conv(self.q0), conv(self.mu1), conv(self.r)

    def mu(self) -> ScalarField:
        return self.mu0 + self.thetabar * self.mu1

    def q(self) -> ScalarField:
        return 1.0 - 2.0 * self.mu() / self.r

    def s(self) -> ScalarField:
        phi = ScalarField.coordinate(2, self.chart)
        mu = self.mu()
        return self.q0 / (4.0 * mu * mu) * sin(self.omega0 * phi + self.phi0)

    def h4(self) -> ScalarField:
        return self.q() + self.thetabar * self.s()


def rotoid_metric(
    p: RotoidParams,
    psi=0.0,
    w=(0.0, 0.0),
    n=(0.0, 0.0),
    h3_form: str = "exact",
    domain: Sequence[tuple[float, float]] | None = None,
) -> DMetric:
    """Stationary rotoid metric -e^psi (dxi^2 + dtheta^2) + h3 (e^3)^2 + h4 (e^4)^2.

    ``h3_form="exact"`` uses h3 = -4 [(sqrt|h4|)*]^2, an exact vacuum solution for
    harmonic psi and v-independent n; ``"linear"`` uses the first-order expansion
    in thetabar.  ``domain`` (xi, theta, phi ranges) is sampled for sign changes of q.
    """
    ch = p.chart
    conv = lambda x: ScalarField.parse(x, ch) if isinstance(x, str) else _as_field(x, ch)
    psi = conv(psi)
    h4 = p.h4()
    if h3_form == "exact":
        b = sqrt(absolute(h4))
        h3 = -4.0 * b.diff(2) ** 2.0
    elif h3_form == "linear":
        sq = sqrt(absolute(p.q()))
        sqs = sq.diff(2)
        h3 = -4.0 * sqs**2.0 * (1.0 + p.thetabar / sqs * (p.s() / sq).diff(2))
    else:
        raise ValueError("h3_form must be 'exact' or 'linear'")
    if domain is not None:
        pts = grid_points(list(domain) + [(0.0, 0.0)], (9, 9, 9, 1)).T
        qv = p.q()(pts)
        if np.any(qv <= 0) and np.any(qv >= 0):
            raise BranchError("q changes sign on the domain (horizon band inside)")
        if np.all(qv <= 0):
            raise DomainError("domain lies inside the horizon (q <= 0)")
    g = [-exp(psi), -exp(psi)]
    N = NConnection([[conv(x) for x in w], [conv(x) for x in n]], ch)
    return DMetric.diagonal(g, [h3, h4], N, ch)


def rotoid_horizon(p: RotoidParams, phi, theta: float = math.pi / 2, bracket: tuple[float, float] | None = None, xtol: float = 1e-14):
    """Horizon locus: xi_+(phi) with h4(xi, theta, phi) = 0, by Brent's method."""
    h4 = p.h4()
    phis = np.atleast_1d(np.asarray(phi, dtype=float))
    lo, hi = bracket if bracket is not None else (p.mu0, 4.0 * p.mu0)
    out = np.empty_like(phis)
    for k, ph in enumerate(phis):
        fn = lambda x: float(h4(np.array([[x], [theta], [ph], [0.0]]))[0])
        out[k] = optimize.brentq(fn, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps)
    return out if np.ndim(phi) else float(out[0])


def aux41_residual(m: DMetric, check: DMetric, h0: float = 2.0, grid=None, tol: float = 1e-8) -> ResidualReport:
    """|eta3| - h0^2 |h4c/h3c| [(sqrt|eta4|)*]^2 with eta_a = h_a / h_a(check)."""
    p, _ = as_points(grid, m.chart.dim)
    js = evaluate([m.h[0][0], m.h[1][1], check.h[0][0], check.h[1][1]], p, 1)
    h3, h4, c3, c4 = js
    eta4 = h4 / c4
    b = absolute(eta4) ** 0.5
    res = np.abs(h3.value / c3.value) - h0 * h0 * np.abs(c4.value / c3.value) * b.partial((_V,)) ** 2
    acc = _Acc()
    acc.add("aux41", res)
    return acc.report({"aux41": tol}, p.shape[1])


@dataclass
class SolitonField:
    """eta(xi, theta, phi) with eta.. + eps (eta' + 6 eta eta* + eta***)* = 0."""

    eta: ScalarField
    epsilon_sign: int = 1

    def __post_init__(self):
        if self.epsilon_sign not in (1, -1):
            raise ValueError("epsilon_sign must be +-1")
        if self.eta.smoothness < 4:
            raise ValueError("eta needs smoothness >= 4")


def soliton_residual(s: SolitonField, grid, tol: float = 1e-7) -> ResidualReport:
    p, _ = as_points(grid, s.eta.chart.dim)
    e = s.eta.jet(p, 4)
    P = e.partial
    inner_s = P((1, 2)) + 6 * (P((2,)) ** 2 + e.value * P((2, 2))) + P((2, 2, 2, 2))
    res = P((0, 0)) + s.epsilon_sign * inner_s
    acc = _Acc()
    acc.add("soliton", res)
    return acc.report({"soliton": tol}, p.shape[1])


# ---------------------------------------------------------------------------
# Finsler re-encoding


@dataclass
class FinslerData:
    """Canonical Finsler d-metric data: f_i, f_a and c N^a_i (rows a, columns i)."""

    f_h: Sequence
    f_v: Sequence
    cN: Sequence[Sequence]


@dataclass
class FinslerReencoding:
    g_prime: np.ndarray  # (2, npts)
    h_prime: np.ndarray  # (2, npts)
    theta: np.ndarray  # (npts,)
    e_v_h: np.ndarray  # [e^{3'}_{1''}, e^{4'}_{2''}]
    e_h_v: np.ndarray  # [e^{1'}_{3''}, e^{2'}_{4''}]
    e_diag: np.ndarray  # (4, npts): e^{alpha'}_alpha
    reassembly_residual: float


def _ratio2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    both = (a == 0) & (b == 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = (a / np.where(both, 1.0, b)) ** 2
    return np.where(both, 1.0, r)


def _root(x: np.ndarray, tol: float, sign: int) -> np.ndarray:
    if np.any(x < -tol):
        raise RadicandSignError("negative radicand in the vielbein equations")
    return sign * np.sqrt(np.maximum(x, 0.0))


def finsler_reencode(m: DMetric, F: FinslerData, points, tol: float = 1e-10, branch: int = 1) -> FinslerReencoding:
    """Rewrite a solution as a Finsler-type d-metric plus frame transforms.

    With rho_w = (w/cw)^2, rho_n = (n/cn)^2 (0/0 counted as 1) the two
    expressions for g_i' agree iff Theta_i = rho_n_i / rho_w_i coincide;
    then h4' = f4, h3' = f3 Theta, g_i' = f_i rho_n_i.
    """
    ch = m.chart
    p, _ = as_points(points, ch.dim)
    conv = lambda x: _as_field(x, ch)
    fields = [m.g[0][0], m.g[1][1], m.h[0][0], m.h[1][1]] + m.N.fields()
    fields += [conv(x) for x in F.f_h] + [conv(x) for x in F.f_v] + [conv(x) for row in F.cN for x in row]
    v = [j.value for j in evaluate(fields, p, 0)]
    gr, hr = v[0:2], v[2:4]
    wr, nr = v[4:6], v[6:8]
    fh, fv = v[8:10], v[10:12]
    cw, cn = v[12:14], v[14:16]
    rw = [_ratio2(wr[i], cw[i]) for i in range(2)]
    rn = [_ratio2(nr[i], cn[i]) for i in range(2)]
    with np.errstate(divide="ignore", invalid="ignore"):
        Th = [np.where((rn[i] == 0) & (rw[i] == 0), 1.0, rn[i] / rw[i]) for i in range(2)]
    if not np.all(np.isfinite(Th[0])) or np.max(np.abs(Th[0] - Th[1])) > tol * (1 + np.max(np.abs(Th[0]))):
        raise CompatibilityError("Theta_1 and Theta_2 differ: w and n ratios are incompatible")
    Theta = Th[0]
    h4p = fv[1]
    h3p = fv[0] * Theta
    gp = [fh[i] * rn[i] for i in range(2)]
    e31 = _root((gr[0] - gp[0]) / h3p, tol, branch)
    e42 = _root((gr[1] - gp[1]) / h4p, tol, branch)
    e13 = _root((hr[0] - h3p) / gp[0], tol, branch)
    e24 = _root((hr[1] - h4p) / gp[1], tol, branch)
    diag = np.array([branch * np.sqrt(np.abs(fa / ga)) for fa, ga in zip(fh + fv, gp + [h3p, h4p])])
    rec = [gp[0] + h3p * e31**2, gp[1] + h4p * e42**2, h3p + gp[0] * e13**2, h4p + gp[1] * e24**2]
    err = max(float(np.max(np.abs(a - b))) for a, b in zip(rec, gr + hr))
    return FinslerReencoding(np.array(gp), np.array([h3p, h4p]), Theta, np.array([e31, e42]), np.array([e13, e24]), diag, err)
