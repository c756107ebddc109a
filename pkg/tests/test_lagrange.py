import numpy as np
import pytest

from nholo import lagrange as lg
from nholo.errors import DegenerateHessianError
from nholo.fields import Chart, fd_oracle

CH1 = Chart(1, 1)
CH2 = Chart(2, 2)
QUARTIC = "exp(x1)*y2^2 + 0.3*y2^4 + x1^2*y2^2"


def test_semispray_matches_symbolic():
    # G = (L_{yx} y - L_x) / (4 g), g = L_yy / 2 (sympy, frozen) at (0.2, 0.7)
    m = lg.LagrangianModel(QUARTIC, CH1)
    p = [0.2, 0.7]
    assert lg.semispray(m, p)[0] == pytest.approx(0.09266659619543999, abs=1e-14)
    assert lg.canonical_nconnection(m, p)[0, 0] == pytest.approx(0.1558135267261768, abs=1e-14)
    assert lg.hessian_metric(m, p)[0, 0] == pytest.approx(2.14340275816017, abs=1e-13)


def test_quadratic_lagrangian_gives_christoffels():
    m = lg.LagrangianModel.quadratic([["1", "0"], ["0", "(1+x1)^2"]], CH2)
    x1, y3, y4 = 0.4, 0.3, -0.8
    G = lg.semispray(m, [x1, 0.1, y3, y4])
    # Gamma^1_22 = -(1+x1), Gamma^2_12 = 1/(1+x1); G = Gamma y y / 2
    assert G[0] == pytest.approx(-0.5 * (1 + x1) * y4**2, abs=1e-14)
    assert G[1] == pytest.approx(y3 * y4 / (1 + x1), abs=1e-14)


def test_hessian_against_finite_differences():
    m = lg.LagrangianModel("sqrt((1+0.2*x1^2)*y3^4 + (1+0.1*sin(x2))*y4^4 + 0.5*y3^2*y4^2)", CH2)
    p = np.array([0.3, 0.7, 0.8, -0.5])
    fd = fd_oracle(m.L, p, 2)
    ref = np.array([[0.5 * fd[(2 + a, 2 + b)] for b in range(2)] for a in range(2)])
    assert np.abs(lg.hessian_metric(m, p) - ref).max() < 1e-7


def test_semispray_homogeneity_for_finsler_type():
    m = lg.LagrangianModel("sqrt((1+0.2*x1^2)*y3^4 + (1+0.1*sin(x2))*y4^4 + 0.5*y3^2*y4^2)", CH2)
    p = np.array([0.3, 0.7, 0.8, -0.5])
    q = p.copy()
    q[2:] *= 2
    assert np.allclose(lg.semispray(m, q), 4 * lg.semispray(m, p), atol=1e-13)


def test_almost_kahler_structure(rng):
    m = lg.LagrangianModel("sqrt(1+y3^2+2*y4^2)*(1+0.1*x1*x2) + 0.2*y3^4", CH2)
    a = lg.almost_symplectic(m, rng.uniform(0.1, 1, (20, 4)))
    assert np.abs(a.J @ a.J + np.eye(4)).max() < 1e-13
    assert a.closedness_residual < 1e-9
    assert a.exactness_residual < 1e-9


def test_normal_connection_properties(rng):
    m = lg.LagrangianModel(QUARTIC.replace("x1", "x1").replace("y2", "y2"), CH1)
    nc = lg.normal_dconnection(m, rng.uniform(0.1, 1, (10, 2)))
    assert np.abs(nc.torsion - nc.torsion_cartan).max() < 1e-12


def test_geodesics_and_euler_lagrange_agree():
    m = lg.LagrangianModel(QUARTIC, CH1)
    c = lg.geodesic_compare(m, [0.2], [0.7], (0.0, 1.0), 1e-3)
    assert c.deviation < 1e-6
    assert c.error_estimate < 1e-10
    e = lg.energy(m, c.spray)
    assert np.ptp(e) < 1e-9  # autonomous Lagrangian: energy conserved


def test_rk4_order():
    m = lg.LagrangianModel.quadratic([["1", "0"], ["0", "(1+x1)^2"]], CH2)
    slope, errs = lg.convergence_slope(m, [0.2, 0.1], [0.3, 0.5])
    assert slope > 3.8 and errs[0] > errs[-1]


def test_trajectory_csv_roundtrip(tmp_path):
    m = lg.LagrangianModel(QUARTIC, CH1)
    tr = lg.spray_trajectory(m, [0.2], [0.7], (0.0, 0.1), 1e-2)
    tr.to_csv(tmp_path / "t.csv")
    back = lg.Trajectory.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.x, tr.x) and np.array_equal(back.y, tr.y)


def test_degenerate_hessian():
    m = lg.LagrangianModel("x1*y2", CH1)
    with pytest.raises(DegenerateHessianError):
        lg.hessian_metric(m, [0.1, 0.2])
