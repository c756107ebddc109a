import numpy as np
import pytest

from nholo import fedosov as fd
from nholo.fields import Chart, ScalarField
from nholo.geometry import NConnection

CH = Chart(1, 1)
F = ScalarField.parse("sin(x1)*exp(0.5*y2)+x1^3", CH)
G = ScalarField.parse("cos(x1*y2)+y2^2", CH)
H = ScalarField.parse("exp(x1-y2)", CH)
P = [0.3, -0.4]
THETA = np.array([[0.0, 1.0], [-1.0, 0.0]])
# sum theta^{a1b1}..theta^{akbk} d_a f d_b g at P (sympy, frozen); term k = (i/2)^k/k! * sum
BIDIFF = [0.31004959032550816, -0.7981507417792979, 2.7804534866379966]


@pytest.fixture
def rng():
    return np.random.default_rng(1)


def test_delta_nilpotent_and_hodge(rng):
    a = fd.random_element(4, rng, order=0, max_deg=4, form_degrees=(0, 1, 2, 3), n_terms=20)
    assert fd.delta(fd.delta(a)).norm() < 1e-14
    assert fd.delta_inverse(fd.delta_inverse(a)).norm() < 1e-14
    h = fd.delta(fd.delta_inverse(a)) + fd.delta_inverse(fd.delta(a)) + fd.sigma(a) - a
    assert h.norm() < 1e-14 * max(1.0, a.norm())


def test_wick_product_associative(rng):
    th = np.array([[0, -1, 0, 0], [1, 0, 0, 0], [0, 0, 0, -1], [0, 0, 1, 0.0]])
    ctx = fd.FedosovContext.flat(th, np.eye(4), 2, 2, order=2)
    a, b, c = (fd.random_element(4, rng, max_deg=2, form_degrees=(0, 1), n_terms=5) for _ in range(3))
    l = fd.wick_product(fd.wick_product(a, b, ctx), c, ctx)
    r = fd.wick_product(a, fd.wick_product(b, c, ctx), ctx)
    assert (l - r).norm() < 1e-12 * l.norm()


def test_D_identities(rng):
    kc = fd.kahler_context(2, order=3, seed=0)
    x = fd.random_element(4, rng, order=3, max_deg=3, form_degrees=(0, 1), n_terms=6)
    T, R = fd.torsion_element(kc), fd.curvature_element(kc)
    lhs = fd.extend_D(fd.delta(x), kc) + fd.delta(fd.extend_D(x, kc))
    assert (lhs - fd.ad_over_v(T, x, kc)).norm() < 1e-10
    lhs = fd.extend_D(fd.extend_D(x, kc), kc)
    assert (lhs + fd.ad_over_v(R, x, kc)).norm() < 1e-10


def test_kahler_context_compatible():
    assert max(fd.kahler_context(1, order=4, seed=3).compatibility()) < 1e-12


def test_fedosov_connection_flat(rng):
    kc = fd.kahler_context(1, order=7, seed=3, deg_max=5)
    res = fd.recursion_r(kc)
    a = fd.random_element(2, rng, order=6, max_deg=2, form_degrees=(0,), n_terms=4, deg_max=5)
    assert res.delta_inverse_residual < 1e-12
    assert res.equation_residual < 1e-9
    assert fd.flatness_residual(kc, res.r, a) < 1e-9


def test_printed_pairing_is_not_flat(rng):
    kc = fd.kahler_context(1, order=7, seed=3, deg_max=5)
    a = fd.random_element(2, rng, order=6, max_deg=2, form_degrees=(0,), n_terms=4, deg_max=5)
    assert fd.flatness_residual(kc, fd.recursion_r(kc, pairing="printed").r, a) > 1e-6


def test_moyal_terms_oracle():
    t = fd.moyal_terms(F, G, THETA, None, 2, P)
    ref = [BIDIFF[0], 0.5j * BIDIFF[1], (0.5j) ** 2 / 2 * BIDIFF[2]]
    assert np.allclose(t, ref, atol=1e-13, rtol=0)


def test_flat_fedosov_star_is_moyal_wick():
    th = np.array([[0, -1.0], [1, 0]])
    ctx = fd.FedosovContext.flat(th, np.eye(2), 1, 1, order=5)
    S = fd.fedosov_star(F, G, ctx, point=P, v_order=2)
    ref = fd.moyal_terms(F, G, ctx.Lam[..., 0], None, 2, P)
    assert np.allclose(S.C, ref, atol=1e-12)


def test_star_commutator_gives_poisson_bracket():
    kc = fd.kahler_context(1, order=6, seed=3, point=P)
    a = fd.fedosov_star(F, G, kc, point=P, v_order=1).C
    b = fd.fedosov_star(G, F, kc, point=P, v_order=1).C
    assert a[0] == pytest.approx(F(np.reshape(P, (2, 1)))[0] * G(np.reshape(P, (2, 1)))[0], abs=1e-13)
    # C1 - C1^T is purely the (imaginary) bracket term
    assert abs((a[1] - b[1]).real) < 1e-12 and abs((a[1] - b[1]).imag) > 1e-3


@pytest.mark.parametrize("N", [None, NConnection([["0.3*sin(x1)"]], CH)])
@pytest.mark.parametrize("order", [1, 2])
def test_truncated_moyal_associativity_order(N, order):
    es = np.array([1e-1, 1e-2, 1e-3])
    ds = [fd.associativity_defect(F, G, H, e * THETA, N, order, P) for e in es]
    slope = np.polyfit(np.log(es), np.log(ds), 1)[0]
    assert slope > order + 0.8


def test_moyal_table_and_json(rng):
    assert len(fd.moyal_table(THETA, 2)) > 0
    a = fd.random_element(2, rng, max_deg=2, form_degrees=(0,), n_terms=3)
    assert isinstance(a.to_json(), list)
