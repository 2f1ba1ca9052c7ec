"""Concrete velocity fields, level sets and manufactured solutions.

The surface studies use an ellipse with oscillating horizontal semi-axis
a(t) = 1 + 0.25 sin(2 pi t) driven by beta = (pi/2) cos(2 pi t)/a(t) (x1, 0);
the coupled bulk-surface demo uses a steady vortex in [-1,1]^2 deforming a
circular drop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .evolution import VelocityField
from .geometry import closest_point_ellipse

__all__ = [
    "AnalyticLevelSet",
    "EllipseLevelSet",
    "ellipse_semiaxis",
    "ellipse_velocity",
    "vortex_velocity",
    "zero_velocity",
    "ExactSurfaceSolution",
    "example1_solution",
    "example2_solution",
    "initial_circle_markers",
    "coupled_initial_bulk",
    "coupled_initial_levelset",
]


class AnalyticLevelSet:
    """Closed-form level set with value, gradient, Hessian, time derivative."""

    def value(self, t, x):
        raise NotImplementedError

    def grad(self, t, x):
        raise NotImplementedError

    def hess(self, t, x):
        raise NotImplementedError

    def normal(self, t, x):
        g = np.atleast_2d(self.grad(t, x))
        return g / np.linalg.norm(g, axis=1)[:, None]

    def __call__(self, t, x):
        return self.value(t, x)


def ellipse_semiaxis(t):
    return 1.0 + 0.25 * np.sin(2.0 * np.pi * t)


def _ellipse_rate(t):
    """a'(t)/a(t) factor of the horizontal stretching velocity."""
    return 0.5 * np.pi * np.cos(2.0 * np.pi * t) / ellipse_semiaxis(t)


class EllipseLevelSet(AnalyticLevelSet):
    """phi = x1^2 / a(t)^2 + x2^2 - 1 (positive outside the ellipse)."""

    def value(self, t, x):
        a = ellipse_semiaxis(t)
        x = np.atleast_2d(x)
        return x[:, 0] ** 2 / a**2 + x[:, 1] ** 2 - 1.0

    def grad(self, t, x):
        a = ellipse_semiaxis(t)
        x = np.atleast_2d(x)
        return np.column_stack([2.0 * x[:, 0] / a**2, 2.0 * x[:, 1]])

    def hess(self, t, x):
        a = ellipse_semiaxis(t)
        n = len(np.atleast_2d(x))
        H = np.zeros((n, 2, 2))
        H[:, 0, 0] = 2.0 / a**2
        H[:, 1, 1] = 2.0
        return H


class CircleLevelSet(AnalyticLevelSet):
    """phi = |x - c| - r (positive outside), a stationary signed distance."""

    def __init__(self, radius=1.0, center=(0.0, 0.0)):
        self.r = radius
        self.c = np.asarray(center, dtype=float)

    def value(self, t, x):
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.c, axis=1) - self.r

    def grad(self, t, x):
        x = np.atleast_2d(x)
        d = x - self.c
        return d / np.linalg.norm(d, axis=1)[:, None]

    def hess(self, t, x):
        x = np.atleast_2d(x)
        d = x - self.c
        r = np.linalg.norm(d, axis=1)
        n = d / r[:, None]
        H = np.empty((len(x), 2, 2))
        eye = np.eye(2)
        H[:] = eye[None]
        H -= np.einsum("ei,ej->eij", n, n)
        return H / r[:, None, None]


def ellipse_velocity():
    """beta = (pi/2) cos(2 pi t) / a(t) * (x1, 0)."""

    def value(t, x):
        x = np.atleast_2d(x)
        c = _ellipse_rate(t)
        return np.column_stack([c * x[:, 0], np.zeros(len(x))])

    def jacobian(t, x):
        n = len(np.atleast_2d(x))
        J = np.zeros((n, 2, 2))
        J[:, 0, 0] = _ellipse_rate(t)
        return J

    def divergence(t, x):
        return np.full(len(np.atleast_2d(x)), _ellipse_rate(t))

    return VelocityField(value, jacobian, divergence)


def vortex_velocity():
    """Steady vortex (-(1+cos pi x) sin pi y, (1+cos pi y) sin pi x)/2."""

    def value(t, x):
        x = np.atleast_2d(x)
        px = np.pi * x[:, 0]
        py = np.pi * x[:, 1]
        return np.column_stack(
            [-0.5 * (1.0 + np.cos(px)) * np.sin(py), 0.5 * (1.0 + np.cos(py)) * np.sin(px)]
        )

    def jacobian(t, x):
        x = np.atleast_2d(x)
        px = np.pi * x[:, 0]
        py = np.pi * x[:, 1]
        J = np.empty((len(x), 2, 2))
        J[:, 0, 0] = 0.5 * np.pi * np.sin(px) * np.sin(py)
        J[:, 0, 1] = -0.5 * np.pi * (1.0 + np.cos(px)) * np.cos(py)
        J[:, 1, 0] = 0.5 * np.pi * (1.0 + np.cos(py)) * np.cos(px)
        J[:, 1, 1] = -0.5 * np.pi * np.sin(py) * np.sin(px)
        return J

    def divergence(t, x):
        return np.zeros(len(np.atleast_2d(x)))

    return VelocityField(value, jacobian, divergence)


def zero_velocity():
    def value(t, x):
        return np.zeros_like(np.atleast_2d(x))

    def jacobian(t, x):
        return np.zeros((len(np.atleast_2d(x)), 2, 2))

    def divergence(t, x):
        return np.zeros(len(np.atleast_2d(x)))

    return VelocityField(value, jacobian, divergence)


@dataclass(frozen=True)
class ExactSurfaceSolution:
    """Ambient exact solution with the derivatives manufacturing needs."""

    value: Callable  # (t, pts) -> (n,)
    grad: Callable  # (t, pts) -> (n, 2)
    hess: Callable  # (t, pts) -> (n, 2, 2)
    dt: Callable  # (t, pts) -> (n,)
    closest_point: Callable  # (t, pts) -> (projected pts, exact normals)


def _ellipse_closest_point(t, pts):
    return closest_point_ellipse(np.atleast_2d(pts), ellipse_semiaxis(t))


def example2_solution():
    """u = exp(-4 t) x1 x2."""

    def value(t, x):
        x = np.atleast_2d(x)
        return np.exp(-4.0 * t) * x[:, 0] * x[:, 1]

    def grad(t, x):
        x = np.atleast_2d(x)
        e = np.exp(-4.0 * t)
        return np.column_stack([e * x[:, 1], e * x[:, 0]])

    def hess(t, x):
        n = len(np.atleast_2d(x))
        H = np.zeros((n, 2, 2))
        H[:, 0, 1] = H[:, 1, 0] = np.exp(-4.0 * t)
        return H

    def dt(t, x):
        x = np.atleast_2d(x)
        return -4.0 * np.exp(-4.0 * t) * x[:, 0] * x[:, 1]

    return ExactSurfaceSolution(value, grad, hess, dt, _ellipse_closest_point)


def example1_solution():
    """u = exp(-4 t) x1 x2 + x1^3 x2^2."""
    base = example2_solution()

    def value(t, x):
        x = np.atleast_2d(x)
        return base.value(t, x) + x[:, 0] ** 3 * x[:, 1] ** 2

    def grad(t, x):
        x = np.atleast_2d(x)
        g = base.grad(t, x)
        g[:, 0] += 3.0 * x[:, 0] ** 2 * x[:, 1] ** 2
        g[:, 1] += 2.0 * x[:, 0] ** 3 * x[:, 1]
        return g

    def hess(t, x):
        x = np.atleast_2d(x)
        H = base.hess(t, x)
        H[:, 0, 0] += 6.0 * x[:, 0] * x[:, 1] ** 2
        H[:, 0, 1] += 6.0 * x[:, 0] ** 2 * x[:, 1]
        H[:, 1, 0] += 6.0 * x[:, 0] ** 2 * x[:, 1]
        H[:, 1, 1] += 2.0 * x[:, 0] ** 3
        return H

    return ExactSurfaceSolution(value, grad, hess, base.dt, _ellipse_closest_point)


def initial_circle_markers(n_markers, radius=1.0, center=(0.0, 0.0)):
    th = 2.0 * np.pi * np.arange(n_markers) / n_markers
    return np.column_stack(
        [center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)]
    )


# -- coupled bulk-surface demo data -----------------------------------------

_R0 = 0.3
_CENTER = np.array([0.1, 0.0])


def coupled_initial_bulk(x):
    """Initial bulk surfactant: 0.5 (1 - x^2)^2 blended to 0 at the drop."""
    x = np.atleast_2d(x)
    r = np.linalg.norm(x - _CENTER, axis=1)
    base = 0.5 * (1.0 - x[:, 0] ** 2) ** 2
    w = 0.5 * (1.0 - np.cos((r - _R0) * np.pi / (0.5 * _R0)))
    out = np.where(r > 1.5 * _R0, base, np.where(r >= _R0, base * w, 0.0))
    return out


def coupled_initial_levelset(x, radius=_R0, center=_CENTER):
    """Signed distance, positive inside the drop (Omega_2)."""
    x = np.atleast_2d(x)
    return radius - np.linalg.norm(x - np.asarray(center), axis=1)
