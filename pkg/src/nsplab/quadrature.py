"""Quadrature on radial grids.

Integrals are taken exactly for the piecewise-cubic (not-a-knot) interpolant of
the sampled integrand, so cubic polynomials are integrated to round-off.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline


def cumulative(r, f):
    """Running integral of ``f`` from ``r[0]`` evaluated at every grid point."""
    r = np.asarray(r, dtype=float)
    f = np.asarray(f, dtype=float)
    if r.size < 2:
        return np.zeros_like(r)
    if r.size < 4:
        out = np.zeros_like(r)
        out[1:] = np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(r))
        return out
    anti = CubicSpline(r, f).antiderivative()
    return anti(r) - anti(r[0])


def integrate(r, f):
    return float(cumulative(r, f)[-1])
