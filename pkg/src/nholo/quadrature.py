"""Quadrature services: adaptive composite Simpson and line-wise Clenshaw-Curtis.

Simpson (panel doubling, Richardson stop) integrates pointwise; the line
variant fits one Chebyshev series per line of points sharing all other
coordinates and reads every requested upper limit off its antiderivative,
which keeps nested integrals affordable on grids.
"""

from __future__ import annotations

from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.fft import dct

from .errors import QuadratureError

DEFAULT_TOL = 1e-9
NODE_BUDGET = 2**16


def simpson_unit(
    integrand: Callable[[np.ndarray], np.ndarray],
    tol: float = DEFAULT_TOL,
    budget: int = NODE_BUDGET,
    min_panels: int = 8,
) -> np.ndarray:
    """Integrate ``integrand`` over s in [0, 1].

    ``integrand(s)`` receives a 1-d array of nodes and must return an array whose
    last axis runs over those nodes. The panel count is doubled until the
    Richardson estimate ``|S_2n - S_n| / 15`` drops below ``tol`` for every
    component; the extrapolated value is returned.
    """
    n = min_panels  # number of Simpson panel pairs * 2 (must be even)
    s = np.linspace(0.0, 1.0, n + 1)
    vals = np.asarray(integrand(s))

    def rule(v: np.ndarray, n: int) -> np.ndarray:
        w = np.ones(n + 1)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        return (v * w).sum(axis=-1) / (3.0 * n)

    prev = rule(vals, n)
    while True:
        if 2 * n + 1 > budget:
            raise QuadratureError(
                f"Simpson quadrature did not reach tolerance {tol:g} within {budget} nodes"
            )
        mids = (np.arange(n) + 0.5) / n
        new = np.asarray(integrand(mids))
        merged = np.empty(vals.shape[:-1] + (2 * n + 1,), dtype=np.result_type(vals, new))
        merged[..., 0::2] = vals
        merged[..., 1::2] = new
        vals = merged
        n *= 2
        cur = rule(vals, n)
        err = np.abs(cur - prev) / 15.0
        if not np.all(np.isfinite(cur)):
            raise QuadratureError("non-finite integrand value encountered")
        if np.all(err <= tol):
            return cur + (cur - prev) / 15.0
        prev = cur


def simpson(
    func: Callable[[np.ndarray], np.ndarray],
    a: float | np.ndarray,
    b: float | np.ndarray,
    tol: float = DEFAULT_TOL,
    budget: int = NODE_BUDGET,
) -> np.ndarray:
    """Integrate ``func`` from ``a`` to ``b`` (broadcastable arrays of limits).

    ``func(x)`` is called with an array of abscissae whose last axis indexes the
    quadrature nodes and whose leading axes follow ``broadcast(a, b)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    span = b - a

    def unit(s: np.ndarray) -> np.ndarray:
        x = a[..., None] + span[..., None] * s
        return np.asarray(func(x)) * span[..., None]

    return simpson_unit(unit, tol=tol, budget=budget)


def _cheb_coeffs(vals: np.ndarray) -> np.ndarray:
    """Chebyshev coefficients (axis 0 last -> first) from values at x_k = cos(pi k/n)."""
    n = vals.shape[-1] - 1
    c = dct(vals, type=1, axis=-1) / n
    c[..., 0] *= 0.5
    c[..., -1] *= 0.5
    return np.moveaxis(c, -1, 0)


def line_integrals(
    integrand: Callable[[np.ndarray], np.ndarray],
    lo: np.ndarray,
    hi: np.ndarray,
    lower: float,
    uppers: np.ndarray,
    group: np.ndarray,
    tol: float = DEFAULT_TOL,
    budget: int = 2**12,
    min_nodes: int = 16,
) -> np.ndarray:
    """Cumulative integrals int_{lower}^{u} along lines (Clenshaw-Curtis).

    Each group ``g`` (a line) owns the interval [lo[g], hi[g]] containing
    ``lower`` and all of its upper limits.  ``integrand(v)`` receives node
    abscissae of shape (G, n+1) and returns (..., G, n+1).  The Chebyshev fit of
    each line is refined by node doubling (nested Lobatto nodes) until the
    integrals at ``uppers`` (shape (M,), line index ``group``) change by less
    than ``tol``.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    half_safe = np.where(half > 0, half, 1.0)
    t_u = (uppers - mid[group]) / half_safe[group]
    t_a = (lower - mid[group]) / half_safe[group]

    def nodes(n: int, k: np.ndarray) -> np.ndarray:
        return mid[:, None] + half[:, None] * np.cos(np.pi * k / n)[None, :]

    def integrate(vals: np.ndarray) -> np.ndarray:
        c = _cheb_coeffs(vals)  # (n+1, ..., G)
        ci = C.chebint(c, axis=0) * half
        cp = ci[(slice(None),) + (Ellipsis,) + (group,)]
        return C.chebval(t_u, cp, tensor=False) - C.chebval(t_a, cp, tensor=False)

    n = min_nodes
    vals = np.asarray(integrand(nodes(n, np.arange(n + 1))))
    prev = integrate(vals)
    while True:
        if 2 * n + 1 > budget:
            raise QuadratureError(f"line quadrature did not reach tolerance {tol:g} within {budget} nodes")
        new = np.asarray(integrand(nodes(2 * n, np.arange(1, 2 * n, 2))))
        merged = np.empty(vals.shape[:-1] + (2 * n + 1,), dtype=np.result_type(vals, new))
        merged[..., 0::2] = vals
        merged[..., 1::2] = new
        vals = merged
        n *= 2
        cur = integrate(vals)
        if not np.all(np.isfinite(cur)):
            raise QuadratureError("non-finite integrand value encountered")
        if np.all(np.abs(cur - prev) <= tol):
            return cur
        prev = cur
