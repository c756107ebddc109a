import numpy as np
import pytest

from nholo.errors import SingularMetricError
from nholo.fields import Chart, ScalarField
from nholo.geometry import (
    DMetric,
    NConnection,
    adapted_frames,
    anholonomy,
    random_dmetric,
    to_offdiagonal,
)

CH = Chart(2, 2)
N_EXPR = [["0.3*y4*x1", "0.2*x2"], ["0.1*y3", "0.2*sin(x1)"]]
P = np.array([0.3, -0.7, 0.4, 1.1])


def nconn():
    return NConnection([[ScalarField.parse(e, CH) for e in row] for row in N_EXPR], CH)


def test_frames_are_dual():
    fb = adapted_frames(nconn(), P)
    # frame_matrix[alpha, mu] e_alpha^mu ; coframe stored [mu, alpha]
    assert np.allclose(fb.frame_matrix @ fb.coframe_matrix, np.eye(4), atol=1e-15)


def test_nconnection_curvature_closed_form():
    x1, x2 = P[0], P[1]
    Om = anholonomy(nconn(), P).Omega
    # Omega^a_12 = e_2 N^a_1 - e_1 N^a_2 with e_i = d_i - N^b_i d_b, worked by hand
    assert Om[0, 0, 1] == pytest.approx(-0.06 * x1 * np.sin(x1), abs=1e-15)
    assert Om[1, 0, 1] == pytest.approx(-0.02 * x2 - 0.2 * np.cos(x1), abs=1e-15)
    assert np.allclose(Om, -np.swapaxes(Om, 1, 2))


def test_anholonomy_vertical_slots():
    W = anholonomy(nconn(), P).W
    # [e_i, e_a] = (d_a N^b_i) e_b : W^b_{i a} = d_a N^b_i
    assert W[2, 0, 3] == pytest.approx(0.3 * P[0])
    assert W[2, 3, 0] == pytest.approx(-0.3 * P[0])
    assert W[3, 0, 2] == pytest.approx(0.1)
    assert np.all(W[:2] == 0)


def test_offdiagonal_form():
    m = DMetric.diagonal([2.0, 3.0], [1.5, 0.5], nconn(), CH)
    G = to_offdiagonal(m, P)
    Nv = np.array([[0.3 * P[3] * P[0], 0.2 * P[1]], [0.1 * P[2], 0.2 * np.sin(P[0])]])
    h = np.diag([1.5, 0.5])
    assert np.allclose(G[:2, :2], np.diag([2.0, 3.0]) + Nv.T @ h @ Nv, atol=1e-15)
    assert np.allclose(G[:2, 2:], Nv.T @ h, atol=1e-15)
    assert np.allclose(G[2:, 2:], h)
    # batched call
    Gb = to_offdiagonal(m, np.stack([P, P]))
    assert Gb.shape == (2, 4, 4) and np.allclose(Gb[1], G)


def test_singular_block_rejected():
    m = DMetric.diagonal([0.0, 1.0], [1.0, 1.0], None, CH)
    with pytest.raises(SingularMetricError):
        to_offdiagonal(m, P)


def test_random_dmetric_reproducible_and_definite():
    a = random_dmetric(np.random.default_rng(4), CH)
    b = random_dmetric(np.random.default_rng(4), CH)
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 4))
    assert np.array_equal(to_offdiagonal(a, pts), to_offdiagonal(b, pts))
    G, H, _ = (j.value for j in a.jets(pts.T, 0))
    assert np.all(np.linalg.eigvalsh(np.moveaxis(G, -1, 0)) > 0)
    assert np.all(np.linalg.eigvalsh(np.moveaxis(H, -1, 0)) > 0)


def test_random_dmetric_follows_signature():
    ch = Chart(2, 2, signature=(-1, 1, 1, 1))
    m = random_dmetric(np.random.default_rng(1), ch)
    G, _, _ = (j.value for j in m.jets(np.zeros((4, 1)), 0))
    ev = np.linalg.eigvalsh(G[..., 0])
    assert ev[0] < 0 < ev[1]
