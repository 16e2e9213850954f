"""Double layer, single layer and density solve on the graph of a height field.

Conventions on the surface X = (x, f(x)):

    N = (-grad f, 1),  T1 = (1, 0, d1 f),  T2 = (0, 1, d2 f)
    K h(x)  = -p.v. int grad Gamma(X - X') . N(x') h(x') dx'
    S h(X)  = -int Gamma(X - X') h(x') dx'
    w       = d2 theta T1 - d1 theta T2

with (1/2 I + K) theta = g.  All integrals use the quadrature in
``_quadrature``; operator objects are cached per height field.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from ._quadrature import GridKernels, OffsetTable, QuadratureConfig
from .green_kernel import GreenKernel, KernelConfig
from .torus_grid import HeightField, PeriodicGrid, spectral_gradient, write_field_csv


class GridMismatchError(ValueError):
    pass


class SolverDivergenceError(RuntimeError):
    def __init__(self, message, residual, iterations):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class BoundaryDensity:
    grid: PeriodicGrid
    theta: np.ndarray
    residual_norm: float      # relative L2 residual ||(I/2 + K) theta - g|| / ||g||
    iterations: int
    tol: float = 1e-8

    def save_csv(self, path, meta=None):
        m = {"residual_norm": self.residual_norm, "iterations": self.iterations, "tol": self.tol}
        m.update(meta or {})
        write_field_csv(path, self.grid, {"theta": self.theta}, m)


@dataclass(frozen=True, eq=False)
class SheetStrength:
    grid: PeriodicGrid
    w: np.ndarray             # shape (3, n, n)

    def save_csv(self, path, meta=None):
        write_field_csv(path, self.grid, {"w1": self.w[0], "w2": self.w[1], "w3": self.w[2]}, meta)


def _check_grid(f: HeightField, phi):
    phi = np.asarray(phi.values if isinstance(phi, HeightField) else phi, dtype=float)
    if phi.shape[-2:] != (f.grid.n, f.grid.n):
        raise GridMismatchError(f"field of shape {phi.shape} on a grid with n = {f.grid.n}")
    return phi


class LayerOperators:
    """All layer potentials for one height field, sharing one quadrature build."""

    def __init__(self, f: HeightField, cfg: KernelConfig | None = None,
                 quad: QuadratureConfig | None = None, table: OffsetTable | None = None,
                 mode="auto"):
        self.f = f
        self.cfg = cfg or KernelConfig()
        self.kernel = GreenKernel(self.cfg)
        self.kernels = GridKernels(f.values, self.kernel, quad, table=table, mode=mode)
        self.table = self.kernels.table
        self.f1, self.f2 = spectral_gradient(f.values)
        one = np.ones_like(self.f1)
        self.normal = np.stack([-self.f1, -self.f2, one])
        self.t1 = np.stack([one, 0 * one, self.f1])
        self.t2 = np.stack([0 * one, one, self.f2])

    @property
    def n(self):
        return self.f.grid.n

    # -- operators -----------------------------------------------------------

    def double_layer(self, phi):
        """K[f] phi."""
        if self.kernels.flat:
            # d_z Gamma(x, 0) is odd in z and the tangential kernels meet N = e3
            return -self.kernels.apply(3, phi)
        out = -self.kernels.apply(3, phi)
        out -= self.kernels.apply(1, self.normal[0] * phi)
        out -= self.kernels.apply(2, self.normal[1] * phi)
        return out

    def single_layer(self, phi):
        """Trace of S phi on the surface (several densities along axis 0 allowed)."""
        phi = np.asarray(phi, dtype=float)
        if phi.ndim == 3:
            return np.moveaxis(self.kernels.apply(0, np.moveaxis(phi, 0, -1)), -1, 0)
        return self.kernels.apply(0, phi)

    def single_layer_tangential(self, phi):
        """(d_T1 S phi, d_T2 S phi): tangential derivatives of the continuous trace."""
        return spectral_gradient(self.single_layer(phi))

    def cross_integral(self, w):
        """p.v. int grad Gamma(X - X') x w(x') dx' as a (3, n, n) array."""
        D = [None] + [self.kernels.apply(a, np.moveaxis(w, 0, -1)) for a in (1, 2, 3)]
        # D[a][..., b] = p.v. int d_a Gamma w_b
        return np.stack([
            D[2][..., 2] - D[3][..., 1],
            D[3][..., 0] - D[1][..., 2],
            D[1][..., 1] - D[2][..., 0],
        ])

    # -- density and sheet ------------------------------------------------------

    def solve_density(self, g, tol=1e-8, restart=40, maxiter=200, x0=None) -> BoundaryDensity:
        if not 1e-12 <= tol <= 1e-3:
            raise ValueError("tol must lie in [1e-12, 1e-3]")
        g = _check_grid(self.f, g)
        n = self.n
        gnorm = np.linalg.norm(g)
        if gnorm == 0.0:
            return BoundaryDensity(self.f.grid, np.zeros((n, n)), 0.0, 0, tol)
        if self.kernels.flat:
            theta = 2.0 * g
            res = np.linalg.norm(0.5 * theta + self.double_layer(theta) - g) / gnorm
            return BoundaryDensity(self.f.grid, theta, float(res), 1, tol)

        def mv(v):
            v = v.reshape(n, n)
            return (0.5 * v + self.double_layer(v)).ravel()

        A = LinearOperator((n * n, n * n), matvec=mv, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1

        # a slightly tighter internal target absorbs the gap between the
        # Arnoldi residual estimate and the true residual
        x, info = gmres(A, g.ravel(), x0=(2.0 * g if x0 is None else np.asarray(x0, dtype=float)).ravel(),
                        rtol=0.2 * tol, atol=0.0,
                        restart=restart, maxiter=maxiter, callback=cb,
                        callback_type="pr_norm")
        theta = x.reshape(n, n)
        res = float(np.linalg.norm(mv(x) - g.ravel()) / gnorm)
        if res > tol:
            raise SolverDivergenceError(
                f"GMRES stopped at relative residual {res:.3e} after {count[0]} iterations",
                res, count[0])
        return BoundaryDensity(self.f.grid, theta, res, count[0], tol)

    def sheet_strength(self, theta) -> SheetStrength:
        th = theta.theta if isinstance(theta, BoundaryDensity) else _check_grid(self.f, theta)
        d1, d2 = spectral_gradient(th)
        return SheetStrength(self.f.grid, d2 * self.t1 - d1 * self.t2)

    def relation_residuals(self, theta, g):
        """Residuals of 1/2 d_j theta - V . T_j - d_j g, V the cross integral of w."""
        th = theta.theta if isinstance(theta, BoundaryDensity) else np.asarray(theta)
        w = self.sheet_strength(th).w
        V = self.cross_integral(w)
        t1, t2 = spectral_gradient(th)
        g1, g2 = spectral_gradient(np.asarray(g, dtype=float))
        r1 = 0.5 * t1 - np.sum(V * self.t1, axis=0) - g1
        r2 = 0.5 * t2 - np.sum(V * self.t2, axis=0) - g2
        return r1, r2


# ---------------------------------------------------------------------------
# functional interface with a small per-field cache

_CACHE: "OrderedDict[tuple, LayerOperators]" = OrderedDict()
_CACHE_SIZE = 2


def _key(f: HeightField, cfg, quad):
    digest = hashlib.sha1(np.ascontiguousarray(f.values).tobytes()).hexdigest()
    return (f.grid.n, digest, cfg, quad)


def operators(f: HeightField, cfg: KernelConfig | None = None,
              quad: QuadratureConfig | None = None) -> LayerOperators:
    cfg = cfg or KernelConfig()
    quad = quad or QuadratureConfig()
    key = _key(f, cfg, quad)
    ops = _CACHE.get(key)
    if ops is None:
        table = None
        for other in _CACHE.values():
            if other.n == f.grid.n and other.cfg == cfg:
                table = other.table
        ops = LayerOperators(f, cfg, quad, table=table)
        _CACHE[key] = ops
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    else:
        _CACHE.move_to_end(key)
    return ops


def clear_cache():
    _CACHE.clear()


def apply_double_layer(f: HeightField, phi, cfg: KernelConfig | None = None):
    return operators(f, cfg).double_layer(_check_grid(f, phi))


def apply_single_layer_tangential(f: HeightField, phi, cfg: KernelConfig | None = None):
    return operators(f, cfg).single_layer_tangential(_check_grid(f, phi))


def solve_density(f: HeightField, g, tol=1e-8, cfg: KernelConfig | None = None,
                  maxiter=200) -> BoundaryDensity:
    return operators(f, cfg).solve_density(g, tol=tol, maxiter=maxiter)


def build_w(f: HeightField, theta) -> SheetStrength:
    th = theta.theta if isinstance(theta, BoundaryDensity) else _check_grid(f, theta)
    d1, d2 = spectral_gradient(th)
    f1, f2 = spectral_gradient(f.values)
    one = np.ones_like(f1)
    t1 = np.stack([one, 0 * one, f1])
    t2 = np.stack([0 * one, one, f2])
    return SheetStrength(f.grid, d2 * t1 - d1 * t2)
