"""Batch front end: ``nholo [command] --config run.toml --out DIR``.

A run configuration is a TOML file (schema in ``configs/SCHEMA.md``).  Every
run writes ``report.json`` (sorted keys, no timings, byte-identical for equal
config and seed), ``summary.txt`` (aligned human-readable table, with wall
times) and, where the pipeline has a trace, ``trace.csv``.

Exit status: 0 when every check passes, 1 when a check fails or the engine
raises a numerical error (the failing check / error is named in the report),
2 for configuration errors (with line/column where available).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import re
import sys
import time
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

import numpy as np

from .errors import ConfigError, ExpressionError, NholoError

__all__ = ["main", "run", "load_config", "COMMANDS", "RunResult", "conformal_oracle"]

REPORT = "report.json"
SUMMARY = "summary.txt"
TRACE = "trace.csv"


# ---------------------------------------------------------------------------
# configuration helpers


class _Cfg:
    """Parsed TOML with the raw text kept for line/column diagnostics."""

    def __init__(self, data: dict, text: str, path: str):
        self.data = data
        self.text = text
        self.path = path

    def locate(self, needle: str) -> tuple[int | None, int | None]:
        k = self.text.find(needle)
        if k < 0:
            return None, None
        line = self.text.count("\n", 0, k) + 1
        col = k - (self.text.rfind("\n", 0, k) + 1) + 1
        return line, col

    def error(self, message: str, needle: str | None = None) -> ConfigError:
        line, col = self.locate(needle) if needle else (None, None)
        return ConfigError(message, line, col)


def load_config(path: str | Path) -> _Cfg:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+), column (\d+)", str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = re.sub(r"\s*\(at line \d+, column \d+\)", "", str(exc))
        raise ConfigError(f"TOML syntax error: {msg}", line, col) from None
    return _Cfg(data, text, str(path))


class _Ctx:
    """Per-run state shared by the command implementations."""

    def __init__(self, cfg: _Cfg, seed: int, tol_scale: float, out: Path):
        self.cfg = cfg
        self.seed = seed
        self.tol_scale = tol_scale
        self.out = out
        self.checks: list[dict] = []
        self.results: dict[str, Any] = {}
        self.trace_rows: list[dict] = []
        self.trace_cols: list[str] = []
        self.timings: dict[str, float] = {}

    # checks ----------------------------------------------------------------------
    def check(self, name: str, value: float, tol: float, op: str = "<=", scale: bool = True) -> bool:
        value = float(value)
        t = float(tol) * (self.tol_scale if scale and op == "<=" else 1.0)
        if op == "<=":
            ok = bool(np.isfinite(value) and value <= t)
        elif op == ">=":
            ok = bool(np.isfinite(value) and value >= t)
        elif op == "==":
            ok = bool(value == t)
        else:
            raise ValueError(op)
        self.checks.append({"name": name, "value": _clean(value), "tol": _clean(t), "op": op, "pass": ok})
        return ok

    def flag(self, name: str, ok: bool, detail: str = "") -> bool:
        self.checks.append({"name": name, "value": bool(ok), "tol": True, "op": "==", "pass": bool(ok), "detail": detail})
        return bool(ok)

    # typed getters -------------------------------------------------------------------
    def get(self, tbl: Mapping, key: str, default=..., kind: type | tuple | None = None, where: str = ""):
        if key not in tbl:
            if default is ...:
                raise self.cfg.error(f"missing key '{key}'{' in ' + where if where else ''}", f"[{where}" if where else None)
            return default
        v = tbl[key]
        if kind is not None:
            kinds = kind if isinstance(kind, tuple) else (kind,)
            if float in kinds and isinstance(v, int) and not isinstance(v, bool):
                v = float(v)
            if not isinstance(v, kinds) or (isinstance(v, bool) and bool not in kinds):
                raise self.cfg.error(f"key '{key}' must be {' or '.join(k.__name__ for k in kinds)}", f"{key}")
        return v

    def tol(self, tbl: Mapping, key: str, default: float) -> float:
        v = float(self.get(tbl, key, default, (float, int)))
        if not v > 0:
            raise self.cfg.error(f"tolerance '{key}' must be > 0", key)
        return v


def _clean(x):
    """JSON-safe plain Python values (NaN/inf -> None)."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, complex):
        return [_clean(x.real), _clean(x.imag)]
    return x


# ---------------------------------------------------------------------------
# charts, fields and metrics from config tables


def _chart(ctx: _Ctx, tbl: Mapping | None, default=(2, 2)):
    from .fields import Chart

    tbl = tbl or {}
    names = tbl.get("coordinates", ())
    sig = tbl.get("signature", ())
    n = int(tbl.get("dim_h", default[0]))
    m = int(tbl.get("dim_v", default[1]))
    try:
        return Chart(n, m, tuple(names), tuple(sig))
    except ValueError as exc:
        raise ctx.cfg.error(f"invalid chart: {exc}", "[chart") from None


def _params(ctx: _Ctx, tbl: Mapping | None) -> dict:
    out = {}
    for k, v in (tbl or {}).items():
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ctx.cfg.error(f"parameter '{k}' must be a number", k)
        out[k] = float(v)
    return out


def _field(ctx: _Ctx, expr, chart, params=None):
    from .fields import ScalarField

    if isinstance(expr, bool):
        raise ctx.cfg.error("boolean where a field expression was expected")
    if isinstance(expr, (int, float)):
        return ScalarField.constant(float(expr), chart)
    if not isinstance(expr, str):
        raise ctx.cfg.error(f"field expression must be a string or number, got {type(expr).__name__}")
    try:
        return ScalarField.parse(expr, chart, params)
    except ExpressionError as exc:
        line, col = ctx.cfg.locate(expr)
        if line is not None and exc.column is not None and exc.column > 0:
            col = (col or 1) + exc.column - 1  # 1-based offset inside the expression
        raise ConfigError(f"{exc.args[0].split(' (line')[0]}", line, col) from None


def _matrix(ctx: _Ctx, rows, chart, params, size: int, name: str):
    if not isinstance(rows, list) or len(rows) != size:
        raise ctx.cfg.error(f"'{name}' must be a {size}x{size} array", name)
    out = []
    for r in rows:
        if not isinstance(r, list) or len(r) != size:
            raise ctx.cfg.error(f"'{name}' must be a {size}x{size} array", name)
        out.append([_field(ctx, e, chart, params) for e in r])
    return out


def _nconnection(ctx: _Ctx, rows, chart, params):
    from .geometry import NConnection

    if rows is None:
        return None
    n, m = chart.dim_h, chart.dim_v
    if not isinstance(rows, list) or len(rows) != m or any(not isinstance(r, list) or len(r) != n for r in rows):
        raise ctx.cfg.error(f"'N' must be a {m}x{n} array (rows: vertical index)", "N")
    return NConnection([[_field(ctx, e, chart, params) for e in r] for r in rows], chart)


def _metric(ctx: _Ctx, tbl: Mapping, rng: np.random.Generator | None = None):
    """DMetric from a [metric] table: ``preset``, ``random = true`` or explicit blocks."""
    from . import solutions as sol
    from .geometry import DMetric, random_dmetric

    preset = tbl.get("preset")
    if preset is not None:
        if preset == "schwarzschild":
            return sol.schwarzschild_prime(
                float(ctx.get(tbl, "alpha", 1.0, (float,))),
                bool(tbl.get("use_xi_coordinate", False)),
                float(tbl.get("theta", 0.0)),
                tuple(tbl["r_range"]) if "r_range" in tbl else None,
                xi_rule=str(tbl.get("xi_rule", "proper")),
            )
        if preset == "nc_polarized":
            return sol.nc_polarize_schwarzschild(float(ctx.get(tbl, "alpha", 1.0, (float,))), float(ctx.get(tbl, "theta", 0.0, (float,))))
        if preset == "nc_gamma":
            return sol.nc_schwarzschild_gamma(float(ctx.get(tbl, "mu0", 1.0, (float,))), float(ctx.get(tbl, "theta", None, (float,))))[0]
        if preset == "conformal":
            chart = _chart(ctx, tbl.get("chart"))
            phi = _field(ctx, ctx.get(tbl, "phi", None, str), chart, _params(ctx, tbl.get("params")))
            from .fields import exp

            e2 = exp(2.0 * phi)
            return DMetric.diagonal([e2] * chart.dim_h, [1.0] * chart.dim_v, None, chart)
        raise ctx.cfg.error(f"unknown metric preset {preset!r}", str(preset))
    chart = _chart(ctx, tbl.get("chart"))
    if tbl.get("random", False):
        if rng is None:
            rng = np.random.default_rng(ctx.seed)
        return random_dmetric(rng, chart, float(tbl.get("scale", 0.3)), float(tbl.get("n_scale", 0.5)))
    params = _params(ctx, tbl.get("params"))
    N = _nconnection(ctx, tbl.get("N"), chart, params)
    if "g_diag" in tbl or "h_diag" in tbl:
        g = [_field(ctx, e, chart, params) for e in ctx.get(tbl, "g_diag", None, list)]
        h = [_field(ctx, e, chart, params) for e in ctx.get(tbl, "h_diag", None, list)]
        if len(g) != chart.dim_h or len(h) != chart.dim_v:
            raise ctx.cfg.error("g_diag/h_diag lengths must match the chart", "g_diag")
        return DMetric.diagonal(g, h, N, chart)
    g = _matrix(ctx, ctx.get(tbl, "g", None, list), chart, params, chart.dim_h, "g")
    h = _matrix(ctx, ctx.get(tbl, "h", None, list), chart, params, chart.dim_v, "h")
    return DMetric(g, h, N, chart)


def _grid_points(ctx: _Ctx, tbl: Mapping, d: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """(npts, d) points from ``bounds`` + ``shape`` (tensor grid) or ``bounds`` + ``random`` (uniform)."""
    from .solutions import grid_points

    bounds = ctx.get(tbl, "bounds", None, list)
    if len(bounds) != d or any(not isinstance(b, list) or len(b) != 2 for b in bounds):
        raise ctx.cfg.error(f"'bounds' needs {d} [lo, hi] pairs", "bounds")
    if "random" in tbl:
        k = int(tbl["random"])
        if k < 1:
            raise ctx.cfg.error("'random' must be >= 1", "random")
        rng = rng if rng is not None else np.random.default_rng(ctx.seed)
        lo = np.array([b[0] for b in bounds], float)
        hi = np.array([b[1] for b in bounds], float)
        return lo + (hi - lo) * rng.random((k, d))
    shape = ctx.get(tbl, "shape", None, list)
    if len(shape) != d or any(int(s) < 1 for s in shape):
        raise ctx.cfg.error(f"'shape' needs {d} positive entries", "shape")
    return grid_points([tuple(map(float, b)) for b in bounds], [int(s) for s in shape])


def _cases(ctx: _Ctx, key: str) -> list[dict]:
    d = ctx.cfg.data
    v = d.get(key)
    if v is None:
        raise ctx.cfg.error(f"missing [[{key}]] table(s)")
    if isinstance(v, dict):
        v = [v]
    if not isinstance(v, list) or not v or any(not isinstance(c, dict) for c in v):
        raise ctx.cfg.error(f"[[{key}]] must be one or more tables", f"[[{key}]]")
    return v


def _name(c: Mapping, k: int) -> str:
    return str(c.get("name", f"case{k}"))


# ---------------------------------------------------------------------------
# verify-solution


def cmd_verify_solution(ctx: _Ctx) -> None:
    from . import connections as cn
    from . import solutions as sol

    for k, case in enumerate(_cases(ctx, "case")):
        name = _name(case, k)
        rng = np.random.default_rng([ctx.seed, k])
        kind = str(case.get("check", "ricci"))
        count = int(case.get("count", 1))
        res: dict[str, Any] = {"check": kind}
        t0 = time.perf_counter()
        if kind == "ricci":
            m = _metric(ctx, ctx.get(case, "metric", None, dict, name), rng)
            pts = _grid_points(ctx, ctx.get(case, "grid", None, dict, name), m.chart.dim, rng)
            conn = str(case.get("connection", "levi_civita"))
            rep = sol.einstein_residual(m, pts, kind=conn, tol=ctx.tol(case, "tol", 1e-8))
            res.update(max_abs=rep.max_abs, n_points=int(pts.shape[0]), entries=rep.to_json())
            ctx.check(f"{name}.ricci.{conn}", rep.max_abs, ctx.tol(case, "tol", 1e-8))
        elif kind == "structure":
            worst = {"torsion_hhh": 0.0, "torsion_vvv": 0.0, "compatibility": 0.0, "distortion": 0.0}
            for j in range(count):
                m = _metric(ctx, ctx.get(case, "metric", None, dict, name), rng)
                pts = _grid_points(ctx, ctx.get(case, "grid", None, dict, name), m.chart.dim, rng)
                n = m.n
                T = cn.torsion(m, cn.CANONICAL, pts).torsion
                Q = cn.metric_compatibility(m, pts)
                D = cn.distortion(m, pts)
                worst["torsion_hhh"] = max(worst["torsion_hhh"], float(np.abs(T[:, :n, :n, :n]).max()))
                worst["torsion_vvv"] = max(worst["torsion_vvv"], float(np.abs(T[:, n:, n:, n:]).max()))
                worst["compatibility"] = max(worst["compatibility"], float(np.abs(Q).max()))
                worst["distortion"] = max(worst["distortion"], float(np.abs(D.Z - D.closed_form).max()))
            res.update(worst, metrics=count)
            ctx.check(f"{name}.torsion_hhh", worst["torsion_hhh"], ctx.tol(case, "tol_torsion", 1e-10))
            ctx.check(f"{name}.torsion_vvv", worst["torsion_vvv"], ctx.tol(case, "tol_torsion", 1e-10))
            ctx.check(f"{name}.compatibility", worst["compatibility"], ctx.tol(case, "tol_compatibility", 1e-9))
            ctx.check(f"{name}.distortion", worst["distortion"], ctx.tol(case, "tol_distortion", 1e-10))
        elif kind == "polarization":
            alpha = float(case.get("alpha", 1.0))
            p = np.array([float(case.get("r", 2.0)), float(case.get("vartheta", math.pi / 3)), 0.0, 0.0])
            vals = [float(f(p.reshape(4, 1))[0]) for f in sol.polarization_corrections(alpha)]
            labels = ("g1", "g2", "h3", "h4")
            res["values"] = dict(zip(labels, vals))
            exp_tbl = ctx.get(case, "expected", None, dict, name)
            for lab, v in zip(labels, vals):
                if lab in exp_tbl:
                    ctx.check(f"{name}.{lab}", abs(v - float(exp_tbl[lab])), ctx.tol(case, "tol", 1e-14))
        elif kind == "rotoid_horizon":
            prm = sol.RotoidParams(
                mu0=float(case.get("mu0", 1.0)), thetabar=float(case.get("thetabar", 0.05)),
                omega0=float(case.get("omega0", 1.0)), phi0=float(case.get("phi0", 0.0)), q0=float(case.get("q0", 1.0)),
            )
            phis = np.linspace(0.0, 2 * math.pi, int(case.get("n_phi", 64)), endpoint=False)
            root = sol.rotoid_horizon(prm, phis)
            mu = prm.mu0
            closed = 2 * mu / (1 + prm.thetabar * (float(case.get("q0", 1.0)) / (4 * mu * mu)) * np.sin(prm.omega0 * phis + prm.phi0))
            err = float(np.max(np.abs(root - closed)))
            res.update(max_abs=err, n_phi=len(phis))
            ctx.check(f"{name}.horizon", err, ctx.tol(case, "tol", 1e-10))
        elif kind == "gamma_schwarzschild":
            mu0, th = float(case.get("mu0", 1.0)), float(ctx.get(case, "theta", None, (float,), name))
            ratio = float(case.get("ratio", 30.0))
            m, _ = sol.nc_schwarzschild_gamma(mu0, th)
            r = math.sqrt(4 * th * ratio)
            h4 = float(m.h[1][1](np.array([[r], [1.0], [0.0], [0.0]]))[0])
            err = abs(h4 - (1 - 2 * mu0 / r))
            res.update(r=r, h4=h4, max_abs=err)
            ctx.check(f"{name}.h4_vs_schwarzschild", err, ctx.tol(case, "tol", 1e-10))
        else:
            raise ctx.cfg.error(f"unknown check {kind!r}", kind)
        ctx.timings[name] = time.perf_counter() - t0
        ctx.results[name] = res


# ---------------------------------------------------------------------------
# generate-solution


_GEN_KEYS = ("psi", "f", "f0", "h0", "sigma0", "n1k", "n2k", "Y2", "Y4", "eps", "theta", "domain", "v0", "w_vacuum", "rule", "params")


def cmd_generate_solution(ctx: _Ctx) -> None:
    from . import solutions as sol
    from .geometry import DMetric

    for k, case in enumerate(_cases(ctx, "generator")):
        name = _name(case, k)
        unknown = set(case) - set(_GEN_KEYS) - {"name", "shape", "tol", "corrupt_h4", "corrupt_min", "corrupt_profile"}
        if unknown:
            raise ctx.cfg.error(f"unknown generator key(s) {sorted(unknown)}", sorted(unknown)[0])
        kw = {key: case[key] for key in _GEN_KEYS if key in case}
        if "domain" not in kw:
            raise ctx.cfg.error("generator needs 'domain' = [[x1lo,x1hi],[x2lo,x2hi],[vlo,vhi]]", "[[generator")
        kw["domain"] = [tuple(map(float, b)) for b in kw["domain"]]
        for key in ("n1k", "n2k", "w_vacuum", "eps"):
            if key in kw:
                kw[key] = tuple(kw[key])
        for key in ("psi", "f", "f0", "h0", "sigma0", "Y2", "Y4"):
            if isinstance(kw.get(key), str):
                _field(ctx, kw[key], sol.GENERATOR_CHART, kw.get("params"))  # diagnostics with line/column
        t0 = time.perf_counter()
        try:
            gen = sol.GeneratingData(**kw)
        except (TypeError, ValueError) as exc:
            raise ctx.cfg.error(f"generator '{name}': {exc}", name) from None
        m = sol.generate_metric(gen)
        shape = [int(s) for s in case.get("shape", [9, 9, 9])] + [1]
        pts = sol.grid_points(list(kw["domain"]) + [(0.0, 0.0)], shape)
        tol = ctx.tol(case, "tol", 1e-7)
        rep = sol.residual_ep1a(m, gen.Y2, gen.Y4, pts, tol=tol * ctx.tol_scale)
        res = {"vacuum": gen.vacuum, "n_points": int(pts.shape[0]), "entries": rep.to_json(), "skipped": rep.n_skipped}
        for e in rep.entries:
            ctx.check(f"{name}.{e.equation_id}", e.max_abs, e.tol / ctx.tol_scale)
        if "corrupt_h4" in case:
            eps = float(case["corrupt_h4"])
            h = [list(r) for r in m.h]
            # a constant factor is a rescaling of y4 (an exact symmetry), so the defect carries a profile
            prof = _field(ctx, case.get("corrupt_profile", "sin(3*v)"), m.chart, kw.get("params"))
            h[1][1] = h[1][1] * (1.0 + eps * prof)
            bad = DMetric(m.g, h, m.N, m.chart)
            rb = sol.residual_ep1a(bad, gen.Y2, gen.Y4, pts, tol=tol)
            res["corrupted_max_abs"] = rb.max_abs
            ctx.check(f"{name}.corruption_detected", rb.max_abs, float(case.get("corrupt_min", 1e-3)), op=">=")
        ctx.timings[name] = time.perf_counter() - t0
        ctx.results[name] = res


# ---------------------------------------------------------------------------
# flow-run


def conformal_oracle(phi0: np.ndarray, lengths: Sequence[float], chi: float) -> np.ndarray:
    """Conformal factor of a 2-d conformally flat block under Ricci flow: ``phi_chi = e^{-2 phi} Lap phi``.

    Independent method of lines: Fourier-spectral Laplacian and an adaptive
    8th-order Runge-Kutta integrator (scipy DOP853, rtol 1e-12).
    """
    from scipy.integrate import solve_ivp

    n1, n2 = phi0.shape
    k1 = 2 * np.pi * np.fft.fftfreq(n1, d=lengths[0] / n1)
    k2 = 2 * np.pi * np.fft.fftfreq(n2, d=lengths[1] / n2)
    K2 = k1[:, None] ** 2 + k2[None, :] ** 2

    def rhs(_, y):
        P = y.reshape(n1, n2)
        lap = np.real(np.fft.ifft2(-K2 * np.fft.fft2(P)))
        return (np.exp(-2 * P) * lap).ravel()

    sol = solve_ivp(rhs, (0.0, chi), phi0.ravel(), method="DOP853", rtol=1e-12, atol=1e-14)
    if not sol.success:
        raise NholoError(f"oracle integration failed: {sol.message}")
    return sol.y[:, -1].reshape(n1, n2)


def cmd_flow_run(ctx: _Ctx) -> None:
    from . import ricciflow as rf

    for k, case in enumerate(_cases(ctx, "case")):
        name = _name(case, k)
        t0 = time.perf_counter()
        m = _metric(ctx, ctx.get(case, "metric", None, dict, name))
        gt = ctx.get(case, "grid", None, dict, name)
        try:
            grid = rf.PeriodicGrid(tuple(gt["shape"]), tuple(gt.get("lengths", ())), tuple(gt.get("origin", ())), gt.get("derivative", "fd4"))
        except (KeyError, ValueError) as exc:
            raise ctx.cfg.error(f"invalid grid in '{name}': {exc}", "shape") from None
        fl = ctx.get(case, "flow", {}, dict, name)
        coupling = fl.get("coupling", "F")
        coupling = None if coupling == "none" else coupling
        f0 = fl.get("f")
        if isinstance(f0, str):
            f0 = _field(ctx, f0, m.chart)
        st0 = rf.initial_state(m, grid, f=f0, tau0=float(fl.get("tau0", 1.0)), coupling=coupling)
        chi_end = float(ctx.get(fl, "chi_end", None, (float,), "flow"))
        dchi = fl.get("dchi", "auto")
        if dchi == "auto":
            bound = rf.stability_bound(st0)
            nsteps = max(1, int(math.ceil(chi_end / (0.9 * bound))))
            dchi = chi_end / nsteps
        dchi = float(dchi)
        normalized = bool(fl.get("normalized", False))
        st, rows, states = rf.run_flow(st0, chi_end, dchi, normalized, str(fl.get("normalization", "dimension")))
        res: dict[str, Any] = {"steps": len(states) - 1, "dchi": dchi, "chi_end": st.chi, "final": rows[-1]}
        for r in rows:
            ctx.trace_rows.append({"case": name, **{c: r[c] for c in rf.TRACE_COLUMNS}})
        ctx.trace_cols = ["case"] + list(rf.TRACE_COLUMNS)
        checks = case.get("checks", [])
        if "drift" in checks:
            dr = max(np.abs(st.g - st0.g).max(), np.abs(st.h - st0.h).max(), np.abs(st.f - st0.f).max()) / max(st.chi, 1e-300)
            res["drift_per_chi"] = dr
            ctx.check(f"{name}.drift_per_chi", dr, ctx.tol(case, "tol_drift", 1e-10))
        if "F_zero" in checks:
            fz = max(abs(r["F_hat"]) for r in rows)
            res["max_abs_F"] = fz
            ctx.check(f"{name}.F_trace_zero", fz, ctx.tol(case, "tol_F", 1e-10))
        if "volume" in checks:
            v0 = rows[0]["volume"]
            vd = max(abs(r["volume"] - v0) for r in rows) / abs(v0)
            res["volume_drift"] = vd
            ctx.check(f"{name}.volume_drift", vd, ctx.tol(case, "tol_volume", 1e-5))
        if "conformal_oracle" in checks:
            phi_num = 0.5 * np.log(st.g[0, 0]).reshape(grid.shape[0], grid.shape[1])
            phi0 = 0.5 * np.log(st0.g[0, 0]).reshape(grid.shape[0], grid.shape[1])
            ref = conformal_oracle(phi0, grid.lengths[:2], st.chi)
            err = float(np.max(np.abs(phi_num - ref)))
            res["oracle_sup_error"] = err
            ctx.check(f"{name}.conformal_oracle", err, ctx.tol(case, "tol_oracle", 1e-4))
        if "probe" in checks:
            nprobe = int(case.get("probe_states", len(states)))
            pr = rf.monotonicity_probe(states[:nprobe], str(case.get("probe_functional", "F")))
            res["probe"] = {"lhs": pr.lhs, "rhs": pr.rhs, "max_rel_err": pr.max_rel_err, "nonnegative": pr.nonnegative}
            ctx.flag(f"{name}.probe_nonnegative", pr.nonnegative)
            ctx.check(f"{name}.probe_identity", pr.max_rel_err, ctx.tol(case, "tol_probe", 1e-2))
        ctx.timings[name] = time.perf_counter() - t0
        ctx.results[name] = res


# ---------------------------------------------------------------------------
# lagrange-model


def cmd_lagrange_model(ctx: _Ctx) -> None:
    from . import lagrange as lg

    for k, case in enumerate(_cases(ctx, "lagrangian")):
        name = _name(case, k)
        t0 = time.perf_counter()
        chart = _chart(ctx, case.get("chart"))
        L = _field(ctx, ctx.get(case, "L", None, str, name), chart, _params(ctx, case.get("params")))
        model = lg.LagrangianModel(L)
        x0 = np.asarray(ctx.get(case, "x0", None, list, name), float)
        y0 = np.asarray(ctx.get(case, "y0", None, list, name), float)
        span = (0.0, float(case.get("tau_end", 1.0)))
        step = float(case.get("step", 1e-3))
        cmp_ = lg.geodesic_compare(model, x0, y0, span, step)
        res: dict[str, Any] = {"deviation": cmp_.deviation, "error_estimate": cmp_.error_estimate}
        ctx.check(f"{name}.spray_vs_euler_lagrange", cmp_.deviation, ctx.tol(case, "tol_deviation", 1e-6))
        steps = [float(s) for s in case.get("refinement_steps", [0.1, 0.05, 0.025, 0.0125])]
        slope, errs = lg.convergence_slope(model, x0, y0, span, steps, step)
        res.update(refinement_steps=steps, refinement_errors=errs, slope=slope)
        ctx.check(f"{name}.convergence_slope", slope, float(case.get("min_slope", 3.8)), op=">=")
        a = lg.almost_symplectic(model, np.concatenate([x0, y0]))
        res["d_theta"] = a.closedness_residual
        ctx.check(f"{name}.d_theta", a.closedness_residual, ctx.tol(case, "tol_dtheta", 1e-9))
        for j, tau in enumerate(cmp_.spray.tau):
            if j % max(1, int(case.get("trace_every", 50))) == 0 or j == len(cmp_.spray.tau) - 1:
                row = {"case": name, "tau": tau}
                for i in range(model.n):
                    row[f"x{i + 1}"] = cmp_.spray.x[j, i]
                    row[f"x{i + 1}_el"] = cmp_.euler_lagrange.x[j, i]
                ctx.trace_rows.append(row)
        cols = ["case", "tau"] + [c for i in range(model.n) for c in (f"x{i + 1}", f"x{i + 1}_el")]
        ctx.trace_cols = ctx.trace_cols if len(ctx.trace_cols) >= len(cols) else cols
        ctx.timings[name] = time.perf_counter() - t0
        ctx.results[name] = res


# ---------------------------------------------------------------------------
# dirac-check


def cmd_dirac_check(ctx: _Ctx) -> None:
    from . import clifford as cl
    from .fields import ScalarField
    for k, case in enumerate(_cases(ctx, "case")):
        name = _name(case, k)
        t0 = time.perf_counter()
        rng = np.random.default_rng([ctx.seed, k])
        count = int(case.get("count", 1))
        worst = {"anticommutator": 0.0, "commutator_identity": 0.0, "tetrad_postulate": 0.0}
        for _ in range(count):
            m = _metric(ctx, ctx.get(case, "metric", None, dict, name), rng)
            pts = _grid_points(ctx, ctx.get(case, "grid", None, dict, name), m.chart.dim, rng)
            d, n = m.chart.dim, m.n
            gs = cl.gamma_set(m, pts)
            G, H, _ = (j.value for j in m.jets(pts.T, 0))
            ginv = np.zeros((pts.shape[0], d, d))
            ginv[:, :n, :n] = np.linalg.inv(np.moveaxis(G, -1, 0))
            ginv[:, n:, n:] = np.linalg.inv(np.moveaxis(H, -1, 0))
            S = gs.flat.shape[-1]
            ac = np.abs(gs.anticommutator() - 2 * ginv[..., None, None] * np.eye(S)).max()
            worst["anticommutator"] = max(worst["anticommutator"], float(ac))
            sub = pts[: int(case.get("identity_points", 50))]
            worst["tetrad_postulate"] = max(worst["tetrad_postulate"], float(np.abs(cl.gamma_covariance_residual(m, sub)).max()))
            ch = m.chart
            names = ch.coordinate_names
            re_ = [f"sin({names[j % d]})*{0.5 + 0.1 * j}" for j in range(S)]
            im_ = [f"cos({names[(j + 1) % d]}*{names[j % d]})" for j in range(S)]
            psi = cl.SpinorField(re_, im_, ch)
            f = ScalarField.parse(str(case.get("f", f"exp(0.3*{names[0]})*cos({names[-1]})")), ch)
            a = cl.dirac_apply(m, psi.scaled(f), sub)
            b = cl.dirac_apply(m, psi, sub)
            fj = f.jet(sub.T, 1)
            sd = cl.spin_data(m, sub.T)
            df = np.stack([fj.partial((j,)) for j in range(d)])
            ef = df.copy()
            ef[:n] = df[:n] - np.einsum("bai,ab->ib", sd.N, df[n:])
            pv, _ = psi.jets(sub.T, 0)
            rhs = -1j * np.einsum("bAij,Ab,bj->bi", sd.curved, ef, pv)
            ci = np.abs(a.total - fj.value[:, None] * b.total - rhs).max()
            worst["commutator_identity"] = max(worst["commutator_identity"], float(ci))
        ctx.results[name] = {**worst, "metrics": count}
        ctx.check(f"{name}.anticommutator", worst["anticommutator"], ctx.tol(case, "tol_anticommutator", 1e-12))
        ctx.check(f"{name}.commutator_identity", worst["commutator_identity"], ctx.tol(case, "tol_commutator", 1e-10))
        ctx.check(f"{name}.tetrad_postulate", worst["tetrad_postulate"], ctx.tol(case, "tol_tetrad", 1e-10))
        ctx.timings[name] = time.perf_counter() - t0


# ---------------------------------------------------------------------------
# star-prod


def _slope(eps: Sequence[float], vals: Sequence[float], floor: float) -> tuple[float, int]:
    e = np.asarray(eps, float)
    v = np.asarray(vals, float)
    keep = v > floor
    if keep.sum() < 2:
        return float("nan"), int(keep.sum())
    return float(np.polyfit(np.log(e[keep]), np.log(v[keep]), 1)[0]), int(keep.sum())


def cmd_star_prod(ctx: _Ctx) -> None:
    from . import fedosov as fd

    for k, case in enumerate(_cases(ctx, "case")):
        name = _name(case, k)
        t0 = time.perf_counter()
        chart = _chart(ctx, case.get("chart"), default=(1, 1))
        prm = _params(ctx, case.get("params"))
        f, g, h = (_field(ctx, ctx.get(case, key, None, (str, float), name), chart, prm) for key in ("f", "g", "h"))
        d = chart.dim
        theta = np.asarray(case.get("theta", np.kron([[0.0, 1.0], [-1.0, 0.0]], np.eye(d // 2)).tolist()), float)
        if theta.shape != (d, d) or not np.allclose(theta, -theta.T):
            raise ctx.cfg.error("'theta' must be an antisymmetric dxd array", "theta")
        N = _nconnection(ctx, case.get("N"), chart, prm)
        point = np.asarray(ctx.get(case, "point", None, list, name), float)
        orders = [int(o) for o in case.get("orders", [1, 2])]
        eps = [float(e) for e in case.get("eps", [1e-1, 1e-2, 1e-3, 1e-4])]
        res: dict[str, Any] = {}
        vals = {}
        for o in orders:
            re_, im_ = fd.moyal_star(f, g, theta, N, o, point)
            vals[o] = [re_, im_]
        res["star"] = {str(o): v for o, v in vals.items()}
        # Poisson-bracket normalisation: f*g - g*f at order 1 = i theta(e f, e g)
        a = fd.moyal_terms(f, g, theta, N, 1, point)
        b = fd.moyal_terms(g, f, theta, N, 1, point)
        pf = f.jet(point.reshape(d, 1), 1)
        pg = g.jet(point.reshape(d, 1), 1)
        from .geometry import adapted_derivatives

        D = lambda X, ax: X.d_(ax)  # noqa: E731
        Nj = N.jet(point.reshape(d, 1), 1).truncate(0) if N is not None else None
        if Nj is None:
            ef = [pf.d_(j).value[0] for j in range(d)]
            eg = [pg.d_(j).value[0] for j in range(d)]
        else:
            ef = [x.value[0] for x in adapted_derivatives(pf, Nj, D, chart.dim_h, chart.dim_v)]
            eg = [x.value[0] for x in adapted_derivatives(pg, Nj, D, chart.dim_h, chart.dim_v)]
        bracket = float(np.einsum("ab,a,b", theta, ef, eg))
        comm = (a[1] - b[1]) - 1j * bracket
        res["poisson_defect"] = abs(comm)
        ctx.check(f"{name}.poisson_normalization", abs(comm), ctx.tol(case, "tol_poisson", 1e-12))
        scale = abs(complex(*vals[orders[0]])) if orders else 1.0
        floor = float(case.get("roundoff_floor", 1e-13)) * max(1.0, float(np.abs(f(point.reshape(d, 1)) * g(point.reshape(d, 1)) * h(point.reshape(d, 1)))[0]))
        for o in orders:
            defects = [fd.associativity_defect(f, g, h, e * theta, N, o, point) for e in eps]
            s, used = _slope(eps, defects, floor)
            res[f"associativity_order{o}"] = {"eps": eps, "defect": defects, "slope": s, "points_used": used}
            ctx.check(f"{name}.associativity_slope_order{o}", s, o + float(case.get("slope_margin", 0.8)), op=">=")
        if case.get("table", True):
            res["table"] = fd.moyal_table(theta, max(orders))
        res["scale"] = scale
        ctx.timings[name] = time.perf_counter() - t0
        ctx.results[name] = res


# ---------------------------------------------------------------------------
# fedosov-run


def cmd_fedosov_run(ctx: _Ctx) -> None:
    from . import fedosov as fd
    from .fields import ScalarField
    from .lagrange import LagrangianModel

    tbl = ctx.cfg.data.get("fedosov", {})
    deg_max = int(tbl.get("deg_max", fd.DEG_MAX))
    n_random = int(tbl.get("n_random", 10))
    tol = ctx.tol(tbl, "tol", 1e-10)
    tol_flat = ctx.tol(tbl, "tol_flatness", 1e-9)
    rng = np.random.default_rng(ctx.seed)
    res: dict[str, Any] = {}
    T0 = time.perf_counter()

    # algebraic identities in d = 4
    worst = {"delta_squared": 0.0, "hodge": 0.0, "wick_associativity": 0.0}
    flat4 = fd.FedosovContext.flat(np.kron([[0.0, -1.0], [1.0, 0.0]], np.eye(2)), np.eye(4), 2, 2, order=1, deg_max=deg_max)
    for _ in range(n_random):
        a = fd.random_element(4, rng, max_deg=4, form_degrees=(0, 1, 2, 3), n_terms=12, deg_max=deg_max)
        worst["delta_squared"] = max(worst["delta_squared"], fd.delta(fd.delta(a)).norm())
        hd = fd.delta(fd.delta_inverse(a)) + fd.delta_inverse(fd.delta(a)) + fd.sigma(a) - a
        worst["hodge"] = max(worst["hodge"], hd.norm())
        x, y, z = (fd.random_element(4, rng, max_deg=2, form_degrees=(0, 1), n_terms=4, deg_max=deg_max) for _ in range(3))
        lhs = fd.wick_product(fd.wick_product(x, y, flat4), z, flat4)
        rhs = fd.wick_product(x, fd.wick_product(y, z, flat4), flat4)
        worst["wick_associativity"] = max(worst["wick_associativity"], (lhs - rhs).norm() / max(1.0, lhs.norm()))
    res.update(worst)
    ctx.check("delta_squared", worst["delta_squared"], 1e-14, scale=False)
    ctx.check("hodge_identity", worst["hodge"], 1e-14, scale=False)
    ctx.check("wick_associativity", worst["wick_associativity"], ctx.tol(tbl, "tol_assoc", 1e-13))

    # structure identities on a Kahler context with nonholonomic frame (d = 4)
    kc = fd.kahler_context(2, order=3, seed=ctx.seed, deg_max=deg_max)
    Tz, Rz = fd.torsion_element(kc), fd.curvature_element(kc)
    wT = wR = wL = 0.0
    for _ in range(max(1, n_random // 2)):
        x = fd.random_element(4, rng, order=3, max_deg=3, form_degrees=(0, 1), n_terms=6, deg_max=deg_max)
        y = fd.random_element(4, rng, order=3, max_deg=2, form_degrees=(0, 1), n_terms=4, deg_max=deg_max)
        lhs = fd.extend_D(fd.delta(x), kc) + fd.delta(fd.extend_D(x, kc))
        wT = max(wT, (lhs - fd.ad_over_v(Tz, x, kc)).norm())
        lhs = fd.extend_D(fd.extend_D(x, kc), kc)
        wR = max(wR, (lhs + fd.ad_over_v(Rz, x, kc)).norm())
        # graded Leibniz on 0-forms
        x0 = x.form_degree(0)
        lhs = fd.extend_D(fd.wick_product(x0, y, kc), kc)
        rhs = fd.wick_product(fd.extend_D(x0, kc), y, kc) + fd.wick_product(x0, fd.extend_D(y, kc), kc)
        wL = max(wL, (lhs - rhs).select(lambda r, s, q, D: D <= deg_max).norm())
    res.update(D_delta=wT, D_squared=wR, leibniz=wL, kahler_compatibility=list(kc.compatibility()))
    ctx.check("D_delta_identity", wT, tol)
    ctx.check("D_squared_identity", wR, tol)
    ctx.check("leibniz", wL, ctx.tol(tbl, "tol_leibniz", 1e-12))

    # flatness at deg_max on 2-d Kahler and Lagrange contexts
    flat_res = {}
    model = LagrangianModel(str(tbl.get("lagrangian", "exp(x1)*y2^2 + 0.3*y2^4 + x1^2*y2^2")), _chart(ctx, None, (1, 1)))
    contexts = {
        "kahler": fd.kahler_context(1, order=deg_max + 2, seed=ctx.seed + 1, deg_max=deg_max),
        "lagrange": fd.lagrange_context(model, tbl.get("point", [0.2, 0.7]), order=deg_max + 1, deg_max=deg_max),
    }
    for label, c in contexts.items():
        r = fd.recursion_r(c, deg_max)
        worst_flat = 0.0
        for _ in range(3):
            a = fd.random_element(2, rng, order=c.order - 1, max_deg=max(0, deg_max - 4), form_degrees=(0,), n_terms=4, deg_max=deg_max)
            worst_flat = max(worst_flat, fd.flatness_residual(c, r.r, a))
        flat_res[label] = {"flatness": worst_flat, "delta_inverse_r": r.delta_inverse_residual, "equation": r.equation_residual,
                           "compatibility": list(c.compatibility())}
        ctx.check(f"flatness.{label}", worst_flat, tol_flat)
        ctx.check(f"delta_inverse_r.{label}", r.delta_inverse_residual, 1e-14, scale=False)
    res["flatness"] = flat_res

    # flat-context star product vs Moyal with the Wick kernel, and normalisation
    ch = _chart(ctx, None, (1, 1))
    f = ScalarField.parse(str(tbl.get("f", "sin(x1)*exp(0.5*y2)+x1^3")), ch)
    g = ScalarField.parse(str(tbl.get("g", "cos(x1*y2)+y2^2")), ch)
    p = np.asarray(tbl.get("star_point", [0.3, -0.4]), float)
    flat2 = fd.FedosovContext.flat(np.array([[0.0, -1.0], [1.0, 0.0]]), np.eye(2), 1, 1, order=5, deg_max=deg_max)
    S = fd.fedosov_star(f, g, flat2, point=p, v_order=2)
    Lam = flat2.Lam[..., 0]
    M = fd.moyal_terms(f, g, Lam, None, 2, p)
    dm = max(abs(a - b) for a, b in zip(S.C, M))
    res["flat_star"] = {"fedosov": S.C, "moyal_wick": M, "max_diff": dm}
    ctx.check("flat_star_vs_moyal_wick", dm, tol)
    kc1 = fd.kahler_context(1, order=6, seed=ctx.seed + 2, point=p)
    S1 = fd.fedosov_star(f, g, kc1, v_order=1)
    S2 = fd.fedosov_star(g, f, kc1, v_order=1)
    fj, gj = f.jet(p.reshape(2, 1), 1), g.jet(p.reshape(2, 1), 1)
    from .fields import Jet
    from .geometry import adapted_derivatives

    Nj = Jet(np.moveaxis(kc1.N.real, -1, 0)[..., None], 2, 6).truncate(1)
    D = lambda X, ax: X.d_(ax)  # noqa: E731
    ef = [x.value[0] for x in adapted_derivatives(fj, Nj, D, 1, 1)]
    eg = [x.value[0] for x in adapted_derivatives(gj, Nj, D, 1, 1)]
    br = float(np.einsum("ab,a,b", kc1.theta_up[..., 0].real, ef, eg))
    nd = abs((S1.C[1] - S2.C[1]) - 1j * br)
    res["normalization"] = {"C1_fg": S1.C[1], "C1_gf": S2.C[1], "bracket": br, "defect": nd}
    ctx.check("star_normalization", nd, tol)
    ctx.check("C0_pointwise", abs(S1.C[0] - float(fj.value[0] * gj.value[0])), tol)
    ctx.timings["fedosov_suite"] = time.perf_counter() - T0
    ctx.results["fedosov"] = res


COMMANDS: dict[str, Callable[[_Ctx], None]] = {
    "verify-solution": cmd_verify_solution,
    "generate-solution": cmd_generate_solution,
    "flow-run": cmd_flow_run,
    "lagrange-model": cmd_lagrange_model,
    "dirac-check": cmd_dirac_check,
    "star-prod": cmd_star_prod,
    "fedosov-run": cmd_fedosov_run,
}


# ---------------------------------------------------------------------------
# driver


class RunResult:
    def __init__(self, status: int, report: dict, out: Path):
        self.status = status
        self.report = report
        self.out = out


def _summary(report: dict, timings: Mapping[str, float]) -> str:
    buf = io.StringIO()
    buf.write(f"command : {report['command']}\n")
    buf.write(f"config  : {report['config']}\n")
    buf.write(f"seed    : {report['seed']}\n")
    buf.write(f"result  : {'PASS' if report['pass'] else 'FAIL'}\n")
    if report.get("error"):
        buf.write(f"error   : {report['error']}\n")
    checks = report.get("checks", [])
    if checks:
        w = max(len(c["name"]) for c in checks)
        buf.write("\n")
        for c in checks:
            v, t = c["value"], c["tol"]
            fv = f"{v:.3e}" if isinstance(v, float) else str(v)
            ft = f"{t:.1e}" if isinstance(t, float) else str(t)
            buf.write(f"{'ok  ' if c['pass'] else 'FAIL'}  {c['name']:<{w}}  {fv:>11} {c['op']} {ft}\n")
    if timings:
        buf.write("\nwall time [s]\n")
        for k, v in timings.items():
            buf.write(f"  {k:<30} {v:8.2f}\n")
    return buf.getvalue()


def _set_threads(n: int | None) -> int | None:
    if n is None:
        env = os.environ.get("NHOLO_THREADS")
        n = int(env) if env and env.isdigit() else None
    if n is None:
        return None
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    try:  # effective for already-loaded BLAS libraries when threadpoolctl is present
        from threadpoolctl import threadpool_limits

        threadpool_limits(n)
    except ImportError:
        pass
    return n


def run(
    config: str | Path,
    out: str | Path | None = None,
    command: str | None = None,
    seed: int | None = None,
    tol_scale: float = 1.0,
    threads: int | None = None,
) -> RunResult:
    """Execute one configuration; always writes report.json and summary.txt (unless the config is unreadable)."""
    cfg = load_config(config)
    data = cfg.data
    cmd = command or data.get("command")
    if cmd is None:
        raise ConfigError("no command given (config key 'command' or positional argument)")
    if cmd not in COMMANDS:
        line, col = cfg.locate(str(cmd))
        raise ConfigError(f"unknown command {cmd!r}; expected one of {sorted(COMMANDS)}", line, col)
    if data.get("command") not in (None, cmd):
        raise ConfigError(f"command {cmd!r} conflicts with the config's {data['command']!r}", *cfg.locate("command"))
    if not tol_scale > 0:
        raise ConfigError("--tol-scale must be > 0")
    seed = int(data.get("seed", 0)) if seed is None else int(seed)
    outdir = Path(out if out is not None else data.get("out", "nholo_out"))
    nthreads = _set_threads(threads)
    ctx = _Ctx(cfg, seed, float(tol_scale), outdir)
    error = None
    T0 = time.perf_counter()
    try:
        COMMANDS[cmd](ctx)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:  # engine rejected a configured value
        raise ConfigError(f"invalid value in {cmd}: {exc}") from None
    except (NholoError, ArithmeticError, np.linalg.LinAlgError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    ctx.timings["total"] = time.perf_counter() - T0
    passed = error is None and all(c["pass"] for c in ctx.checks) and bool(ctx.checks)
    failing = [c["name"] for c in ctx.checks if not c["pass"]]
    report = {
        "command": cmd,
        "config": Path(cfg.path).name,
        "seed": seed,
        "tol_scale": float(tol_scale),
        "checks": ctx.checks,
        "failing": failing,
        "results": ctx.results,
        "pass": passed,
        "error": error,
    }
    report = _clean(report)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / REPORT).write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    timings = dict(ctx.timings)
    if nthreads is not None:
        timings = {**timings}
    (outdir / SUMMARY).write_text(_summary(report, timings) + (f"threads : {nthreads}\n" if nthreads else ""))
    if ctx.trace_rows:
        with open(outdir / TRACE, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=ctx.trace_cols, extrasaction="ignore")
            w.writeheader()
            for r in ctx.trace_rows:
                w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    return RunResult(0 if passed else 1, report, outdir)


def main(argv: Sequence[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="nholo", description="Run an nholo pipeline from a TOML configuration.")
    ap.add_argument("command", nargs="?", choices=sorted(COMMANDS), help="pipeline (default: the config's 'command')")
    ap.add_argument("--config", required=True, help="TOML run configuration")
    ap.add_argument("--out", default=None, help="output directory (default: config 'out' or ./nholo_out)")
    ap.add_argument("--threads", type=int, default=None, help="BLAS/OpenMP threads (fallback: NHOLO_THREADS)")
    ap.add_argument("--seed", type=int, default=None, help="override the config seed")
    ap.add_argument("--tol-scale", type=float, default=1.0, help="multiply every upper-bound tolerance")
    args = ap.parse_args(argv)
    try:
        res = run(args.config, args.out, args.command, args.seed, args.tol_scale, args.threads)
    except ConfigError as exc:
        print(f"nholo: configuration error: {exc}", file=sys.stderr)
        return 2
    rep = res.report
    status = "PASS" if res.status == 0 else "FAIL"
    print(f"nholo {rep['command']}: {status} ({len(rep['checks'])} checks, report in {res.out / REPORT})")
    if rep.get("error"):
        print(f"  error: {rep['error']}")
    for name in rep["failing"]:
        print(f"  failed: {name}")
    return res.status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
