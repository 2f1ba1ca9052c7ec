"""Quadrature rules: closed Newton-Cotes in time, Gauss rules in space.

Space-time integrals are evaluated by first applying a Newton-Cotes rule
over the time slab (so the interface only has to be rebuilt at the time
quadrature points) and then Gauss rules on the spatial geometry at each of
those times.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "TimeQuadrature",
    "newton_cotes",
    "gauss_on_segment",
    "gauss_on_triangle",
    "reference_segment_rule",
    "reference_triangle_rule",
]


@dataclass(frozen=True)
class TimeQuadrature:
    """Closed Newton-Cotes rule on one time interval."""

    points: np.ndarray
    weights: np.ndarray
    n_points: int
    degree_of_precision: int

    @property
    def t_start(self):
        return self.points[0]

    @property
    def t_end(self):
        return self.points[-1]


# (relative node positions, relative weights, precision) per point count
_NEWTON_COTES = {
    2: ([0.0, 1.0], [0.5, 0.5], 1),
    3: ([0.0, 0.5, 1.0], [1.0 / 6.0, 4.0 / 6.0, 1.0 / 6.0], 3),
    5: (
        [0.0, 0.25, 0.5, 0.75, 1.0],
        [7.0 / 90.0, 32.0 / 90.0, 12.0 / 90.0, 32.0 / 90.0, 7.0 / 90.0],
        5,
    ),
}


def newton_cotes(n_m, t_start, t_end):
    """Closed Newton-Cotes rule with ``n_m`` points on [t_start, t_end].

    Supported point counts are 2 (trapezoid, precision 1), 3 (Simpson,
    precision 3) and 5 (precision 5).
    """
    if n_m not in _NEWTON_COTES:
        raise ValueError(f"unsupported Newton-Cotes point count {n_m}; use 2, 3 or 5")
    rel_pts, rel_w, precision = _NEWTON_COTES[n_m]
    k = float(t_end) - float(t_start)
    points = t_start + k * np.asarray(rel_pts)
    weights = k * np.asarray(rel_w)
    return TimeQuadrature(points, weights, n_m, precision)


@lru_cache(maxsize=None)
def reference_segment_rule(degree):
    """Gauss-Legendre points/weights on [0, 1] exact to ``degree``."""
    npts = max(1, (int(degree) + 2) // 2)
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_on_segment(a, b, degree):
    """Gauss rule on the segment a-b in physical coordinates.

    Weights sum to the segment length.
    """
    if degree > 13:
        raise ValueError("segment rules implemented up to degree 13")
    s, w = reference_segment_rule(degree)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    points = a[None, :] + s[:, None] * (b - a)[None, :]
    return points, w * np.linalg.norm(b - a)


@lru_cache(maxsize=None)
def reference_triangle_rule(degree):
    """Conical-product Gauss rule on the reference triangle.

    Tensor Gauss-Legendre x Gauss-Jacobi(1,0) collapsed onto the triangle
    {xi, eta >= 0, xi + eta <= 1}; exact for total degree <= ``degree``
    with positive weights. Weights sum to 1/2.
    """
    m = max(1, (int(degree) + 2) // 2)
    u, wu = np.polynomial.legendre.leggauss(m)
    u = 0.5 * (u + 1.0)
    wu = 0.5 * wu
    xj, wj = roots_jacobi(m, 1.0, 0.0)
    v = 0.5 * (xj + 1.0)
    wv = 0.25 * wj
    xi = np.outer(u, 1.0 - v).ravel()
    eta = np.tile(v, m)
    w = np.outer(wu, wv).ravel()
    return np.column_stack([xi, eta]), w


def gauss_on_triangle(vertices, degree):
    """Gauss rule on a physical triangle; weights sum to its area."""
    if degree > 10:
        raise ValueError("triangle rules implemented up to degree 10")
    verts = np.asarray(vertices, dtype=float)
    ref_pts, ref_w = reference_triangle_rule(degree)
    j0 = verts[1] - verts[0]
    j1 = verts[2] - verts[0]
    det = j0[0] * j1[1] - j0[1] * j1[0]
    area2 = abs(det)
    if area2 < 1e-300:
        raise ValueError("degenerate triangle")
    points = verts[0][None, :] + np.outer(ref_pts[:, 0], j0) + np.outer(ref_pts[:, 1], j1)
    return points, ref_w * area2
