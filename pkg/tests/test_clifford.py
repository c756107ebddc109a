import numpy as np
import pytest

from nholo import clifford as cl
from nholo.fields import Chart, ScalarField
from nholo.geometry import DMetric, NConnection, random_dmetric

CH = Chart(2, 2)


def inverse_blocks(m, pts):
    G, H, _ = (j.value for j in m.jets(pts.T, 0))
    gi = np.zeros((pts.shape[0], 4, 4))
    gi[:, :2, :2] = np.linalg.inv(np.moveaxis(G, -1, 0))
    gi[:, 2:, 2:] = np.linalg.inv(np.moveaxis(H, -1, 0))
    return gi


@pytest.mark.parametrize("sig", [(1, 1, 1, 1), (-1, 1, 1, 1)])
def test_flat_clifford_algebra(sig):
    g = cl.flat_gammas(sig)
    ac = np.einsum("aij,bjk->abik", g, g) + np.einsum("bij,ajk->abik", g, g)
    assert np.allclose(ac, 2 * np.einsum("ab,ij->abij", np.diag(sig), np.eye(g.shape[-1])), atol=1e-15)


@pytest.mark.parametrize("sig", [(1, 1, 1, 1), (-1, 1, 1, 1)])
def test_curved_anticommutator(rng, sig):
    m = random_dmetric(rng, Chart(2, 2, signature=sig))
    pts = rng.uniform(-1, 1, (100, 4))
    gs = cl.gamma_set(m, pts)
    S = gs.flat.shape[-1]
    assert np.abs(gs.anticommutator() - 2 * inverse_blocks(m, pts)[..., None, None] * np.eye(S)).max() < 1e-12


def test_tetrad_postulate_and_antihermitian_connection(rng):
    m = random_dmetric(rng, CH)
    pts = rng.uniform(-1, 1, (20, 4))
    assert np.abs(cl.gamma_covariance_residual(m, pts)).max() < 1e-12
    Om = cl.spin_dconnection(m, pts)
    assert np.abs(Om + np.conj(np.swapaxes(Om, -1, -2))).max() < 1e-12


def test_vielbein_derivative_against_finite_differences():
    g = [["1+0.2*sin(x1)*cos(y3)", "0.1*cos(x2+y4)"], ["0.1*cos(x2+y4)", "1.5+0.3*sin(x2*y3)"]]
    m = DMetric(g, [["2", "0.1*x1"], ["0.1*x1", "1+y4^2"]], NConnection([["0.3*y4", "0"], ["0", "0.1*x1"]], CH), CH)
    p = np.array([0.3, -0.2, 0.5, 0.7])
    sd = cl.spin_data(m, p.reshape(4, 1))
    h = 1e-5
    fd = np.array([(cl.orthonormal_vielbein(m, p + h * e)[0] - cl.orthonormal_vielbein(m, p - h * e)[0]) / (2 * h) for e in np.eye(4)])
    ad = fd.copy()
    ad[:2] = fd[:2] - np.einsum("ai,ajk->ijk", sd.N[0], fd[2:])
    assert np.abs(ad - sd.dE[0]).max() < 1e-8


def test_dirac_plane_wave():
    flat = DMetric.diagonal([1, 1], [1, 1], None, CH)
    k = 1.7
    u = np.array([1, 0.5, -0.2, 0.3])
    pw = cl.SpinorField([f"{a}*cos({k}*x1)" for a in u], [f"{a}*sin({k}*x1)" for a in u], CH)
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 4))
    r = cl.dirac_apply(flat, pw, pts)
    v, _ = pw.jets(pts.T, 0)
    g1 = cl.gamma_set(flat, pts[0]).flat[0]
    assert np.abs(r.total - k * np.einsum("ij,bj->bi", g1, v)).max() < 1e-13
    assert np.abs(r.total - r.h - r.v).max() < 1e-15


def test_dirac_commutator_identity(rng):
    m = random_dmetric(rng, CH)
    pts = rng.uniform(-1, 1, (20, 4))
    psi = cl.SpinorField(["sin(x1)*y3", "cos(x2)", "x1*y4", "1"], ["0.5*y3", "x2*x1", "0", "sin(y4)"], CH)
    f = ScalarField.parse("exp(0.3*x1)*cos(y3)+x2*y4", CH)
    a, b = cl.dirac_apply(m, psi.scaled(f), pts), cl.dirac_apply(m, psi, pts)
    fj = f.jet(pts.T, 1)
    sd = cl.spin_data(m, pts.T)
    df = np.stack([fj.partial((k,)) for k in range(4)])
    ef = df.copy()
    ef[:2] = df[:2] - np.einsum("bai,ab->ib", sd.N, df[2:])
    pv, _ = psi.jets(pts.T, 0)
    rhs = -1j * np.einsum("bAij,Ab,bj->bi", sd.curved, ef, pv)
    assert np.abs(a.total - fj.value[:, None] * b.total - rhs).max() < 1e-10


def test_spinor_product_positive():
    m = DMetric.diagonal([1, 1], [1, 1], None, CH)
    psi = cl.SpinorField(["1", "0", "0", "0"], None, CH)
    assert cl.spinor_product(m, psi, psi, [(0, 1)] * 4, nodes=4).real == pytest.approx(1.0, abs=1e-14)
