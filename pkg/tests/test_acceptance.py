"""Every acceptance criterion, run through the shipped configs at its stated tolerance."""
import time
from pathlib import Path

import pytest

from nholo import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run_config(name, out, **kw):
    t = time.perf_counter()
    res = cli.run(CONFIGS / name, out, **kw)
    return res, time.perf_counter() - t


def failing(res):
    return ", ".join(res.report["failing"]) or (res.report["error"] or "-")


def worst(res, *prefixes):
    vals = [c["value"] for c in res.report["checks"] if c["op"] == "<=" and c["name"].split(".")[-1].startswith(prefixes or ("",))]
    return max(vals) if vals else float("nan")


def test_criterion_1_schwarzschild(tmp_path, criterion_line):
    res, dt = run_config("c1_schwarzschild.toml", tmp_path, threads=1)
    ok = res.report["pass"] and dt < 10.0
    criterion_line(1, ok, f"max Ricci residual {worst(res):.2e} (< 1e-8), {dt:.2f} s (< 10 s)")
    assert ok, failing(res)


def test_criterion_2_canonical_structure(tmp_path, criterion_line):
    res, _ = run_config("c2_structure.toml", tmp_path)
    n = len(res.report["checks"])
    criterion_line(2, res.report["pass"], f"{n} checks over 10 metrics x 200 points, worst {worst(res):.2e}")
    assert res.report["pass"], failing(res)


def test_criterion_3_generator_closure(tmp_path, criterion_line):
    res, _ = run_config("c3_generator.toml", tmp_path)
    gens = len(res.report["results"])
    criterion_line(3, res.report["pass"], f"{gens} generating sets on 17^3 grids; corruption probe included")
    assert gens >= 5
    assert res.report["pass"], failing(res)


def test_criterion_4_golden_coefficients(tmp_path, criterion_line):
    # The quoted theta^2 value of g1 disagrees with its own closed form (-5/64); this
    # check is expected to fail and is analysed in the project notes.
    res, _ = run_config("c4_golden.toml", tmp_path)
    bad = {c["name"]: c["value"] for c in res.report["checks"] if not c["pass"]}
    criterion_line(4, res.report["pass"], "failing: " + (", ".join(f"{k} (abs err {v:.3e})" for k, v in bad.items()) or "-"))
    assert res.report["pass"], failing(res)


def test_criterion_5_lagrange(tmp_path, criterion_line):
    res, _ = run_config("c5_lagrange.toml", tmp_path)
    slopes = [c["value"] for c in res.report["checks"] if c["op"] == ">="]
    criterion_line(5, res.report["pass"], f"{len(res.report['results'])} Lagrangians, min slope {min(slopes):.3f}")
    assert len(res.report["results"]) >= 3
    assert res.report["pass"], failing(res)
    assert (tmp_path / "trace.csv").exists()


def test_criterion_6_ricci_flow(tmp_path, criterion_line):
    res, dt = run_config("c6_flow.toml", tmp_path)
    ok = res.report["pass"] and dt < 60.0
    criterion_line(6, ok, f"drift/oracle/volume/probe checks, {dt:.1f} s for all four flows (< 60 s)")
    assert ok, failing(res)


def test_criterion_7_clifford(tmp_path, criterion_line):
    res, _ = run_config("c7_dirac.toml", tmp_path)
    criterion_line(7, res.report["pass"], f"worst residual {worst(res):.2e}")
    assert res.report["pass"], failing(res)


def test_criterion_8_star_products(tmp_path, criterion_line):
    star, _ = run_config("c8_star.toml", tmp_path / "star")
    fed, dt = run_config("c8_fedosov.toml", tmp_path / "fedosov")
    ok = star.report["pass"] and fed.report["pass"] and dt < 120.0
    criterion_line(8, ok, f"Moyal slopes + Fedosov suite at deg_max 6, {dt:.1f} s (< 120 s)")
    assert ok, failing(star) + "; " + failing(fed)


def test_criterion_9_determinism(tmp_path, criterion_line):
    a, _ = run_config("c9_determinism.toml", tmp_path / "a")
    b, _ = run_config("c9_determinism.toml", tmp_path / "b", threads=1)
    c, _ = run_config("c9_determinism.toml", tmp_path / "c", seed=10)
    ra, rb, rc = ((p / "report.json").read_bytes() for p in (a.out, b.out, c.out))
    ok = ra == rb and ra != rc
    criterion_line(9, ok, "report.json byte-identical across repeated runs (and a different seed changes it)")
    assert ok
