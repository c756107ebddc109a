import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nholo.errors import DomainError, ExpressionError, OrderError
from nholo.fields import (
    MAX_ORDER,
    Box,
    Chart,
    Jet,
    ScalarField,
    einsum,
    eval_jet,
    evaluate,
    exp,
    fd_oracle,
    inv,
    sin,
    stack,
    tables,
)

CH = Chart(2, 2)
P = np.array([0.3, -0.7, 0.4, 1.1])

# partials of sin(x1) e^{y3} + sqrt(x2^2+1) tanh(y4) / cosh(x1 y4) at P (sympy, frozen)
H_EXPR = "sin(x1)*exp(y3) + sqrt(x2^2+1)*tanh(y4)/cosh(x1*y4)"
H_PARTIALS = {
    (): 1.3671047826544527,
    (0,): 1.1006650621365142,
    (3,): 0.3271161770273067,
    (0, 3): -0.6842879810852824,
    (1, 1): 0.41720663019909654,
    (0, 1, 3): 0.3214775750065086,
    (0, 0, 3, 3): 0.08239259476608932,
    (1, 1, 1, 1): 0.5412166546432132,
    (0, 1, 2, 3): 0.0,
}


def test_chart_defaults_and_validation():
    assert CH.coordinate_names == ("x1", "x2", "y3", "y4")
    assert CH.signature == (1, 1, 1, 1)
    assert CH.dim == 4 and CH.index("y3") == 2
    with pytest.raises(ValueError):
        Chart(2, 2, ("a", "a", "b", "c"))
    with pytest.raises(ValueError):
        Chart(1, 1, signature=(1, 2))


def test_tables_count_monomials():
    for d, K in [(1, 3), (2, 4), (4, 4)]:
        assert tables(d, K).n == math.comb(d + K, K)


@pytest.mark.parametrize("multi,expected", sorted(H_PARTIALS.items()))
def test_jet_partials_match_symbolic(multi, expected):
    jv = eval_jet(ScalarField.parse(H_EXPR, CH), P, 4)
    assert jv[multi] == pytest.approx(expected, abs=1e-13)


def test_jet_agrees_with_finite_differences():
    f = ScalarField.parse(H_EXPR, CH)
    a, b = eval_jet(f, P, 3), fd_oracle(f, P, 3)
    assert max(abs(a.partials[k] - b.partials[k]) for k in a.partials) < 1e-5


def test_batched_evaluation_matches_pointwise(rng):
    f = ScalarField.parse(H_EXPR, CH)
    pts = rng.uniform(-1, 1, (4, 7))
    J = f.jet(pts, 2)
    for k in range(7):
        jv = eval_jet(f, pts[:, k], 2)
        assert J.partial((0, 3))[k] == pytest.approx(jv[(0, 3)], abs=1e-14)


def test_order_cap_and_raised_smoothness():
    f = ScalarField.parse("exp(x1)", CH)
    with pytest.raises(OrderError):
        f.jet(P.reshape(4, 1), MAX_ORDER + 1)
    g = ScalarField(f.node, CH, smoothness=6)
    assert g.jet(P.reshape(4, 1), 6).partial((0,) * 6)[0] == pytest.approx(math.exp(P[0]), rel=1e-14)


def test_parse_errors_carry_offsets():
    with pytest.raises(ExpressionError) as e:
        ScalarField.parse("sin(x1)*qq", CH)
    assert e.value.column == 9
    with pytest.raises(ExpressionError):
        ScalarField.parse("sin(x1", CH)
    with pytest.raises(ExpressionError):
        ScalarField.parse("foo(x1)", CH)


def test_parameters_and_caret():
    f = ScalarField.parse("a*x1^2 + pi", CH, {"a": 3.0})
    assert f(P.reshape(4, 1))[0] == pytest.approx(3 * P[0] ** 2 + math.pi)


def test_diff_and_integral_nodes():
    f = ScalarField.parse("integral(exp(x1*y3)*y3, y3, 0)", CH)
    s = np.linspace(0, P[2], 20001)
    ref = np.trapezoid(np.exp(P[0] * s) * s, s)
    assert f(P.reshape(4, 1))[0] == pytest.approx(ref, abs=1e-9)
    # d/dy3 of the integral is the integrand
    d = f.diff("y3")
    assert d(P.reshape(4, 1))[0] == pytest.approx(math.exp(P[0] * P[2]) * P[2], abs=1e-12)
    g = ScalarField.parse("diff(sin(x1)*x2, x1)", CH)
    assert g(P.reshape(4, 1))[0] == pytest.approx(math.cos(P[0]) * P[1])


def test_restriction_and_dependency():
    f = ScalarField.parse("x1*y3 + x2", CH)
    r = f.at("y3", 2.0)
    assert not r.depends_on("y3") and f.depends_on("y3") and not f.depends_on("y4")
    assert r(P.reshape(4, 1))[0] == pytest.approx(2 * P[0] + P[1])


def test_domain_checks():
    f = ScalarField.parse("x1", CH).with_domain(Box((0, 0, 0, 0), (1, 1, 1, 1)))
    with pytest.raises(DomainError):
        f(P.reshape(4, 1))


def test_jet_linear_algebra():
    d, K = 2, 3
    x = Jet.variable(np.array([0.4]), 0, d, K)
    y = Jet.variable(np.array([0.9]), 1, d, K)
    A = stack([stack([1.0 + x * x, y]), stack([y, 2.0 + x])])
    Ai = inv(A)
    I = einsum("ij...,jk...->ik...", A, Ai)
    eye = np.eye(2)[:, :, None]
    assert np.abs(I.value - eye).max() < 1e-14
    assert np.abs(I.c[1:]).max() < 1e-13


_floats = st.floats(-1.5, 1.5)


@given(_floats, _floats)
def test_product_and_chain_rule(a, b):
    d, K = 2, 3
    x = Jet.variable(np.array([a]), 0, d, K)
    y = Jet.variable(np.array([b]), 1, d, K)
    f = sin(x * y) * exp(x)
    # d/dx [sin(xy) e^x] = (y cos(xy) + sin(xy)) e^x
    expected = (b * math.cos(a * b) + math.sin(a * b)) * math.exp(a)
    assert f.partial((0,))[0] == pytest.approx(expected, abs=1e-12)
    # mixed third derivative against the derivative operator
    assert f.d_(0).d_(1).partial((1,))[0] == pytest.approx(f.partial((0, 1, 1))[0], abs=1e-12)


@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4))
def test_evaluate_shares_points(vals):
    p = np.array(vals).reshape(4, 1)
    f, g = ScalarField.parse("x1*y4", CH), ScalarField.parse("x2+y3", CH)
    jf, jg = evaluate([f, g], p, 1)
    assert jf.value[0] == pytest.approx(vals[0] * vals[3])
    assert jg.partial((2,))[0] == 1.0
