import math

import numpy as np
import pytest
import scipy.special as sps

from nholo import solutions as sol
from nholo.connections import CANONICAL
from nholo.errors import AnsatzShapeError, GeneratorDegeneracyError, PsiResidualError
from nholo.geometry import DMetric, to_offdiagonal

DOM = [(0.1, 0.5), (0.1, 0.5), (0.5, 1.5)]
PTS = sol.grid_points(DOM + [(0.0, 0.0)], (4, 4, 4, 1))


def test_grid_points_shape():
    g = sol.grid_points([(0, 1), (0, 2), (0, 0)], (3, 5, 1))
    assert g.shape == (15, 3) and g[:, 2].max() == 0 and g[:, 1].max() == 2


def test_schwarzschild_prime_components():
    m = sol.schwarzschild_prime(1.0)
    G = to_offdiagonal(m, [4.0, 0.7, 0.0, 0.0])
    assert np.allclose(np.diag(G), [-4 / 3, -16, -16 * math.sin(0.7) ** 2, 0.75])


def test_schwarzschild_vacuum_residual():
    r, th = np.meshgrid(np.linspace(3, 10, 20), np.linspace(0.3, 2.8, 10), indexing="ij")
    grid = np.stack([r.ravel(), th.ravel(), 0 * r.ravel(), 0 * r.ravel()], 1)
    assert sol.einstein_residual(sol.schwarzschild_prime(1.0), grid).max_abs < 1e-8


def test_xi_coordinate_roundtrip():
    xi = sol.xi_of_r(np.array([4.0, 7.0]), 1.0)
    mx = sol.schwarzschild_prime(1.0, use_xi_coordinate=True)
    grid = np.stack([xi, [0.7, 1.1], [0, 0], [0, 0]], 1)
    assert sol.einstein_residual(mx, grid).max_abs < 1e-8


def test_polarization_closed_forms():
    pt = np.array([[2.0], [math.pi / 3], [0.0], [0.0]])
    vals = [float(f(pt)[0]) for f in sol.polarization_corrections(1.0)]
    assert vals == pytest.approx([-5 / 64, 9 / 64, 1 / 64, -5 / 256], abs=1e-14)


def test_lower_gamma_matches_scipy():
    for x in (0.3, 1.0, 5.0, 30.0):
        assert sol.lower_gamma_32(x) == pytest.approx(sps.gammainc(1.5, x) * sps.gamma(1.5), rel=1e-12)


def test_gamma_metric_reaches_schwarzschild():
    mu0, th = 1.0, 0.05
    m, _ = sol.nc_schwarzschild_gamma(mu0, th)
    r = math.sqrt(4 * th * 30)
    h4 = m.h[1][1](np.array([[r], [1.0], [0.0], [0.0]]))[0]
    assert abs(h4 - (1 - 2 * mu0 / r)) < 1e-10


def test_rotoid_horizon_closed_form():
    p = sol.RotoidParams(mu0=1.0, thetabar=0.05, omega0=2.0, phi0=0.3, q0=1.0)
    phis = np.linspace(0, 2 * np.pi, 40, endpoint=False)
    expected = 2 / (1 + 0.05 * 0.25 * np.sin(2 * phis + 0.3))
    assert np.abs(sol.rotoid_horizon(p, phis) - expected).max() < 1e-10


def test_sigma_profile_exact_and_printed():
    g = sol.GeneratingData(Y2=0.3, f="v", f0=0, h0=1, sigma0=1, v0=0.0)
    assert sol.sigma_profile(g, [0.2, 0.3], 1.0) == pytest.approx(1 / (1 + 0.3), abs=1e-12)
    gp = sol.GeneratingData(Y2=0.3, f="v", f0=0, h0=1, sigma0=1, v0=0.0, rule="printed")
    assert sol.sigma_profile(gp, [0.2, 0.3], 1.0) == pytest.approx(1 - 0.3 / 16, abs=1e-12)


GEN_SETS = {
    "vacuum": dict(psi="0.3*(x1^2-x2^2)", f="v+0.3*sin(x1)*v^2", f0="0.1*x2", h0=2.0,
                   n1k=("x1", "0.5"), n2k=("0.2*x2", "0.1*x1*x2"), w_vacuum=("0.2*sin(x2*v)", "0.1*v*x1")),
    "lambda": dict(psi="log(4/(0.5*(1-x1^2-x2^2)^2))", f="v+0.2*x1*v^2", f0="-0.3", h0="1+0.1*x1",
                   sigma0="1+0.1*x2", n1k=("x2", "0"), n2k=("0.3", "x1"), Y2=0.5, Y4=0.5),
    "v_source": dict(psi="x1*x2", f="exp(0.5*v)+x1", f0="0", h0=1.5, sigma0=2.0,
                     n1k=("0", "x1"), n2k=("0.5", "0.2"), Y2="0.3*v*(1+x1)", Y4=0),
}


@pytest.mark.parametrize("name", sorted(GEN_SETS))
def test_generator_closure(name):
    gen = sol.GeneratingData(domain=DOM, **GEN_SETS[name])
    m = sol.generate_metric(gen)
    rep = sol.residual_ep1a(m, gen.Y2, gen.Y4, PTS)
    assert rep.passed and rep.max_abs < 1e-10
    assert rep["dual_path"].max_abs < 1e-10


def test_generator_corruption_detected():
    gen = sol.GeneratingData(domain=DOM, **GEN_SETS["lambda"])
    m = sol.generate_metric(gen)
    h = [list(r) for r in m.h]
    from nholo.fields import ScalarField

    h[1][1] = h[1][1] * (1 + 0.01 * ScalarField.parse("sin(3*v)", m.chart))
    bad = DMetric(m.g, h, m.N, m.chart)
    assert sol.residual_ep1a(bad, gen.Y2, gen.Y4, PTS).max_abs > 1e-3


def test_constant_h4_rescaling_is_a_symmetry():
    gen = sol.GeneratingData(domain=DOM, **GEN_SETS["lambda"])
    m = sol.generate_metric(gen)
    h = [list(r) for r in m.h]
    h[1][1] = h[1][1] * 1.01
    assert sol.residual_ep1a(DMetric(m.g, h, m.N, m.chart), gen.Y2, gen.Y4, PTS).max_abs < 1e-12


def test_generator_preconditions():
    with pytest.raises(PsiResidualError):
        sol.generate_metric(sol.GeneratingData(domain=DOM, psi="x1^2", f="v", Y2=-0.5, Y4=-0.5))
    with pytest.raises(AnsatzShapeError):
        sol.GeneratingData(domain=DOM, psi="v", f="v")
    with pytest.raises(GeneratorDegeneracyError):
        sol.generate_metric(sol.GeneratingData(domain=DOM, f="x1"))


def test_rotoid_metric_is_canonical_vacuum():
    p = sol.RotoidParams(mu0=1.0, thetabar=0.05, omega0=2.0, phi0=0.3, q0="1+0.1*xi", mu1="0.3*cos(phi)*(1+0.1*theta)")
    dom = [(3, 6), (0.5, 2.5), (0.1, 3.0)]
    m = sol.rotoid_metric(p, psi="0.2*(xi^2-theta^2)", w=("0.1*sin(phi)*xi", "0.2*theta"), n=("theta", "xi"), domain=dom)
    grid = sol.grid_points(dom + [(0, 0)], (4, 4, 4, 1))
    assert sol.einstein_residual(m, grid, kind=CANONICAL).max_abs < 1e-8


def test_soliton_residual():
    from nholo.fields import Chart, ScalarField

    ch = Chart(2, 2, ("xi", "theta", "phi", "t"))
    k = 0.7
    eta = ScalarField.parse(f"2*{k}^2/cosh({k}*(phi-4*{k}^2*theta))^2", ch)
    g = sol.grid_points([(0, 1), (0, 1), (-2, 2), (0, 0)], (4, 4, 9, 1))
    assert sol.soliton_residual(sol.SolitonField(eta, 1), g).max_abs < 1e-7
