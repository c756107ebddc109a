import math

import numpy as np
import pytest

from nholo.fields import Chart, ScalarField
from nholo.quadrature import simpson, simpson_unit


def test_simpson_unit_vector_valued():
    out = simpson_unit(lambda s: np.stack([np.exp(s), s**5]), tol=1e-13)
    assert out[0] == pytest.approx(math.e - 1, abs=1e-12)
    assert out[1] == pytest.approx(1 / 6, abs=1e-12)


def test_simpson_broadcast_limits():
    b = np.array([0.5, 1.0, 2.0])
    out = simpson(np.cos, 0.0, b, tol=1e-12)
    assert np.allclose(out, np.sin(b), atol=1e-11)


def test_line_and_simpson_integral_nodes_agree():
    ch = Chart(2, 2)
    pts = np.random.default_rng(0).uniform(0.1, 1.0, (4, 30))
    expr = "exp(x1*y3)*cos(y3+x2)"
    a = ScalarField.parse(expr, ch).integrate("y3", 0.1, method="line").jet(pts, 2)
    b = ScalarField.parse(expr, ch).integrate("y3", 0.1, method="simpson").jet(pts, 2)
    assert np.abs(a.c - b.c).max() < 1e-11


def test_integral_closed_form():
    ch = Chart(1, 1)
    f = ScalarField.parse("y2^3", ch).integrate("y2", 0.0)
    assert f(np.array([[0.0], [1.3]]))[0] == pytest.approx(1.3**4 / 4, abs=1e-13)
