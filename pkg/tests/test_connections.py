import numpy as np
import pytest

from nholo import connections as cn
from nholo.errors import OrderError
from nholo.fields import Chart, ScalarField
from nholo.geometry import DMetric, NConnection, random_dmetric
from nholo.solutions import schwarzschild_prime

CH = Chart(2, 2)
P = np.array([0.3, -0.7, 0.4, 1.1])


def generic_metric():
    g = [["2+0.2*sin(x1)*y3", "0.1*x2"], ["0.1*x2", "3+0.1*x1^2"]]
    h = [["1+0.2*y4^2", "0"], ["0", "2+0.1*cos(x2)"]]
    N = [["0.3*y4*x1", "0.2*x2"], ["0.1*y3", "0.2*sin(x1)"]]
    return DMetric(g, h, NConnection(N, CH), CH)


def test_levi_civita_scalar_matches_coordinate_oracle():
    # scalar curvature of the off-diagonal coordinate metric, symbolic Christoffels (sympy, frozen)
    assert cn.curvature(generic_metric(), cn.LEVI_CIVITA, P).scalar == pytest.approx(-0.16008172723782377, abs=1e-12)


def test_round_sphere_scalar():
    ch = Chart(1, 1, ("th", "ph"))
    m = DMetric.diagonal([4.0], ["4*sin(th)^2"], None, ch)
    assert cn.curvature(m, cn.LEVI_CIVITA, [1.0, 0.2]).scalar == pytest.approx(0.5, abs=1e-13)


def test_canonical_structure_on_random_metrics(rng):
    pts = rng.uniform(-1, 1, (60, 4))
    for _ in range(3):
        m = random_dmetric(rng, CH)
        T = cn.torsion(m, cn.CANONICAL, pts).torsion
        assert np.abs(T[:, :2, :2, :2]).max() < 1e-12
        assert np.abs(T[:, 2:, 2:, 2:]).max() < 1e-12
        assert np.abs(cn.metric_compatibility(m, pts)).max() < 1e-12
        D = cn.distortion(m, pts)
        assert np.abs(D.Z - D.closed_form).max() < 1e-12


def test_levi_civita_is_torsion_free_and_compatible(rng):
    m = random_dmetric(rng, CH)
    pts = rng.uniform(-1, 1, (20, 4))
    assert np.abs(cn.torsion(m, cn.LEVI_CIVITA, pts).torsion).max() < 1e-12
    assert np.abs(cn.metric_compatibility(m, pts, cn.LEVI_CIVITA)).max() < 1e-12


def test_canonical_torsion_has_anholonomy_part():
    T = cn.torsion(generic_metric(), cn.CANONICAL, P).torsion
    # h-h -> v torsion equals the N-connection curvature
    from nholo.geometry import anholonomy

    Om = anholonomy(generic_metric().N, P).Omega
    assert np.abs(T[2:, :2, :2]).max() > 1e-3
    assert np.allclose(np.abs(T[2:, :2, :2]), np.abs(Om), atol=1e-14)


def test_schwarzschild_vacuum():
    m = schwarzschild_prime(1.0)
    r = np.linspace(3, 10, 5)
    th = np.linspace(0.3, 2.8, 4)
    pts = np.array([[a, b, 0.0, 0.0] for a in r for b in th])
    cd = cn.curvature(m, cn.LEVI_CIVITA, pts)
    assert np.abs(cd.ricci).max() < 1e-12
    assert np.abs(cd.riemann).max() > 1e-3  # vacuum but curved


def test_canonical_and_lc_agree_for_holonomic_diagonal():
    m = DMetric.diagonal(["1+0.1*x1^2", "2"], ["1", "1"], None, CH)
    a = cn.canonical_dconnection(m, P).coefficients
    b = cn.levi_civita(m, P).coefficients
    assert np.allclose(a, b, atol=1e-15)


def test_connection_blocks_shapes():
    c = cn.canonical_dconnection(generic_metric(), P)
    assert c.L_h.shape == (2, 2, 2) and c.C_v.shape == (2, 2, 2)


def test_unknown_kind_and_smoothness():
    with pytest.raises(ValueError):
        cn.curvature(generic_metric(), "weird", P)
    f = ScalarField(ScalarField.parse("1+x1^2", CH).node, CH, smoothness=1)
    m = DMetric.diagonal([f, 1.0], [1.0, 1.0], None, CH)
    with pytest.raises(OrderError):
        cn.curvature(m, cn.LEVI_CIVITA, P)
