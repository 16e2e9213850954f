"""Pointwise Dirichlet-Neumann operator on the unit sphere in R^3.

At the pole x* = (1, 0, 0),

    DN g(x*) = -1/(4 pi) int (g(y) + g(y~) - 2 g(x*)) / |y - x*|^3 dsigma(y),
    y~ = (y1, -y2, -y3),

(the prefactor is 1/(n alpha(n)) with n = 3 and alpha(3) = 4 pi / 3).  Other
points are reduced to the pole by a rotation.  The integral is computed in
geodesic polar coordinates about x*: y = cos(a) x* + sin(a)(cos(b) e2 +
sin(b) e3), with dyadic Gauss-Legendre panels in a toward the singularity and
the trapezoid rule in b.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import sph_harm_y

POLE = np.array([1.0, 0.0, 0.0])
BALL_VOLUME = 4.0 * math.pi / 3.0


class RefinementError(RuntimeError):
    def __init__(self, message, last):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class SphereBoundaryFunction:
    """A function on the unit sphere; ``evaluator`` maps (..., 3) points to values.

    ``regularity`` optionally records (point, alpha, constant) of a declared
    C^{1,alpha} bound at a point.
    """
    evaluator: object
    regularity: tuple | None = None

    def __call__(self, y):
        return np.asarray(self.evaluator(np.asarray(y, dtype=float)), dtype=float)


@dataclass(frozen=True)
class SphereDnValue:
    value: float
    quad_error_estimate: float
    n_refinements: int


def _as_function(g):
    return g if isinstance(g, SphereBoundaryFunction) else SphereBoundaryFunction(g)


def _rule(level):
    """Nodes (a, b) and weights for refinement ``level`` (including sin a)."""
    panels = 6 + 2 * level
    q = 10 + 2 * level
    m = 32 * 2 ** (level // 2)
    xg, wg = np.polynomial.legendre.leggauss(q)
    edges = [math.pi * 2.0 ** (-k) for k in range(panels + 1)][::-1]
    edges = [0.0] + edges
    a, wa = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        a.append(0.5 * (hi - lo) * xg + 0.5 * (hi + lo))
        wa.append(0.5 * (hi - lo) * wg)
    a = np.concatenate(a)
    wa = np.concatenate(wa)
    # b in [0, pi) suffices: y~ is the point at b + pi
    b = math.pi * np.arange(m) / m
    wb = np.full(m, 2.0 * math.pi / m)
    return a, wa, b, wb


def _pole_integral(g: SphereBoundaryFunction, level):
    a, wa, b, wb = _rule(level)
    A, Bq = np.meshgrid(a, b, indexing="ij")
    sa = np.sin(A)
    y = np.stack([np.cos(A), sa * np.cos(Bq), sa * np.sin(Bq)], axis=-1)
    yt = y * np.array([1.0, -1.0, -1.0])
    g0 = float(g(POLE))
    num = g(y) + g(yt) - 2.0 * g0
    # |y - x*| = 2 sin(a / 2)
    dist3 = (2.0 * np.sin(0.5 * A)) ** 3
    integrand = num / dist3 * sa
    # the symmetrised integrand has period pi in b, so m nodes on [0, pi)
    # with weight 2 pi / m integrate it over the full circle
    total = np.sum(integrand * wa[:, None] * wb[None, :])
    return -total / (3.0 * BALL_VOLUME)


def sphere_dn_at_pole(g, tol=1e-8, max_refinements=8) -> SphereDnValue:
    g = _as_function(g)
    prev = _pole_integral(g, 0)
    for k in range(1, max_refinements + 1):
        cur = _pole_integral(g, k)
        err = abs(cur - prev)
        if err <= tol:
            return SphereDnValue(float(cur), float(err), k)
        prev = cur
    raise RefinementError(
        f"no convergence after {max_refinements} refinements (last change {err:.3e})",
        SphereDnValue(float(cur), float(err), max_refinements))


def rotation_to_pole(x):
    """Rotation matrix R with R x = (1, 0, 0) for a unit vector x."""
    x = np.asarray(x, dtype=float)
    nx = np.linalg.norm(x)
    if abs(nx - 1.0) > 1e-10:
        raise ValueError("point must lie on the unit sphere")
    x = x / nx
    v = np.cross(x, POLE)
    c = float(np.dot(x, POLE))
    s = np.linalg.norm(v)
    if s < 1e-14:
        if c > 0:
            return np.eye(3)
        return np.diag([-1.0, -1.0, 1.0])      # half turn about e3
    k = v / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def sphere_dn_at_point(g, x_sharp, tol=1e-8, rotation=None, max_refinements=8) -> SphereDnValue:
    """DN g at ``x_sharp``: the pole formula applied to y -> g(R^T y) where R x_sharp = x*."""
    g = _as_function(g)
    R = rotation_to_pole(x_sharp) if rotation is None else np.asarray(rotation, dtype=float)
    if not np.allclose(R @ np.asarray(x_sharp, dtype=float), POLE, atol=1e-12):
        raise ValueError("rotation does not map x_sharp to the pole")
    rotated = SphereBoundaryFunction(lambda y: g(y @ R), g.regularity)
    return sphere_dn_at_pole(rotated, tol=tol, max_refinements=max_refinements)


def real_spherical_harmonic(l, m):
    """Real spherical harmonic Y_lm as a function of Cartesian points on the sphere."""
    def ev(y):
        y = np.asarray(y, dtype=float)
        theta = np.arccos(np.clip(y[..., 2], -1.0, 1.0))
        phi = np.arctan2(y[..., 1], y[..., 0])
        z = sph_harm_y(l, abs(m), theta, phi)
        if m > 0:
            return math.sqrt(2.0) * (-1) ** m * z.real
        if m < 0:
            return math.sqrt(2.0) * (-1) ** m * z.imag
        return z.real
    return SphereBoundaryFunction(ev)


def random_sphere_points(k, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(k, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)
