import numpy as np
import pytest

from nholo import ricciflow as rf
from nholo.cli import conformal_oracle
from nholo.errors import StabilityError
from nholo.fields import Chart
from nholo.geometry import DMetric

CH = Chart(2, 2)
WARPED = DMetric.diagonal(["exp(0.4*sin(x1))"] * 2, ["exp(0.3*sin(x1))", "1"], None, CH)


def test_grid_validation():
    with pytest.raises(ValueError):
        rf.PeriodicGrid((3, 8))
    g = rf.PeriodicGrid((8, 1))
    assert g.active == (0,) and g.points().shape[0] == 2


def test_spectral_and_fd_derivatives():
    for kind, tol in (("spectral", 1e-13), ("fd4", 1e-3)):
        g = rf.PeriodicGrid((32, 1), derivative=kind)
        x = g.axes()[0]
        f = np.sin(x)[:, None]
        assert np.abs(g.deriv(f, 0) - np.cos(x)[:, None]).max() < tol


def test_flat_torus_is_stationary():
    st = rf.initial_state(DMetric.diagonal([1, 1], [1, 1], None, CH), rf.PeriodicGrid((8, 8, 1, 1)), f=0.0)
    s = st
    for _ in range(5):
        s = rf.flow_step(s, 0.05)
    assert np.abs(s.g - st.g).max() == 0 and np.abs(s.f - st.f).max() == 0
    rep = rf.functionals(st)
    assert abs(rep.F_hat) < 1e-12
    # only the g/(2 tau) shift survives on the flat torus: 2 tau^2 * (n+m)/(4 tau^2) * int mu dV
    mu = (4 * np.pi * st.tau) ** -2
    assert rep.fluctuation == pytest.approx(2.0 * mu * rep.measure, rel=1e-12)  # measure = int e^{-f} dV


def test_conformal_flow_matches_oracle():
    phi = "0.1*sin(x1)+0.05*cos(x2)"
    gr = rf.PeriodicGrid((32, 32, 1, 1))
    m = DMetric.diagonal([f"exp(2*({phi}))"] * 2, [1, 1], None, CH)
    st = rf.initial_state(m, gr, coupling=None)
    s = st
    for _ in range(10):
        s = rf.flow_step(s, 0.005)
    phi0 = 0.5 * np.log(st.g[0, 0])[..., 0, 0]
    ref = conformal_oracle(phi0, gr.lengths[:2], s.chi)
    assert np.abs(0.5 * np.log(s.g[0, 0])[..., 0, 0] - ref).max() < 1e-5


def test_normalized_flow_preserves_volume():
    st = rf.initial_state(WARPED, rf.PeriodicGrid((32, 8, 1, 1)), coupling=None)
    v0 = rf.total_volume(st)
    s = st
    for _ in range(20):
        s = rf.flow_step(s, 0.005, normalized=True)
    assert abs(rf.total_volume(s) - v0) / v0 < 1e-10


def test_printed_normalization_drifts_in_four_dimensions():
    st = rf.initial_state(WARPED, rf.PeriodicGrid((32, 8, 1, 1)), coupling=None)
    v0 = rf.total_volume(st)
    s = st
    for _ in range(20):
        s = rf.flow_step(s, 0.005, normalized=True, normalization="printed")
    assert abs(rf.total_volume(s) - v0) / v0 > 1e-5


def test_monotonicity_identity_for_fibre_constant_h():
    m = DMetric.diagonal(["exp(0.4*sin(x1))"] * 2, [1, 1], None, CH)
    st = rf.initial_state(m, rf.PeriodicGrid((32, 8, 1, 1)), f="0.1*cos(x1)")
    states = [st]
    for _ in range(4):
        states.append(rf.flow_step(states[-1], 0.005))
    p = rf.monotonicity_probe(states, "F")
    assert p.nonnegative and p.max_rel_err < 1e-3
    assert abs(rf.total_measure(states[-1]) - rf.total_measure(st)) < 1e-10


def test_torsion_trace_breaks_identity_for_x_dependent_h():
    st = rf.initial_state(WARPED, rf.PeriodicGrid((32, 8, 1, 1)), f="0.1*cos(x1)")
    states = [st]
    for _ in range(3):
        states.append(rf.flow_step(states[-1], 0.005))
    assert rf.monotonicity_probe(states, "F").max_rel_err > 0.1


def test_stability_guard():
    st = rf.initial_state(WARPED, rf.PeriodicGrid((32, 8, 1, 1)))
    with pytest.raises(StabilityError):
        rf.flow_step(st, 10 * rf.stability_bound(st))


def test_run_flow_trace(tmp_path):
    st = rf.initial_state(WARPED, rf.PeriodicGrid((16, 1, 1, 1)))
    s, rows, states = rf.run_flow(st, 0.01, 0.005, trace_csv=tmp_path / "trace.csv")
    assert len(rows) == 3 and len(states) == 3 and s.chi == pytest.approx(0.01)
    assert (tmp_path / "trace.csv").read_text().splitlines()[0].split(",") == list(rf.TRACE_COLUMNS)


def test_functional_error_estimates_shrink():
    a = rf.functionals(rf.initial_state(WARPED, rf.PeriodicGrid((16, 6, 1, 1)), f="0.1*cos(x1)"))
    b = rf.functionals(rf.initial_state(WARPED, rf.PeriodicGrid((32, 8, 1, 1)), f="0.1*cos(x1)"))
    assert abs(a.F_hat - b.F_hat) <= a.errors["F_hat"]
    assert b.errors["F_hat"] < a.errors["F_hat"]
    assert b.entropy == -b.W_hat
