"""Fundamental solution of the Laplacian on the periodic slab T^2 x R.

The kernel is normalised so that ``Laplacian(Gamma) = sum of Dirac masses``
on the lattice Z^2 x {0}, with the additive constant fixed so that the zero
Fourier mode is exactly ``|z|/2``.  Two evaluation regimes are used:

* ``|z| >= switch_height``: the Fourier series in x, whose coefficients are
  given in closed form by :func:`beta_coefficient`.  It converges like
  ``exp(-2 pi |k| |z|)``.
* ``|z| < switch_height``: an Ewald split.  Free-space images over
  ``[-R, R]^2`` are screened by ``erfc`` and the smooth complement is summed
  in Fourier space with Gaussian damping.  Both tails are bounded in closed
  form, which is where ``err_bound`` comes from.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

FOUR_PI = 4.0 * math.pi
_SQRT_PI = math.sqrt(math.pi)
_EPS = np.finfo(float).eps


class SingularPointError(ValueError):
    """Raised when the kernel is requested at a lattice point (x, z) = (0, 0)."""


class KernelAccuracyError(RuntimeError):
    """Raised when the certified error bound exceeds the requested tolerance."""

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


@dataclass(frozen=True)
class KernelConfig:
    """Truncation parameters of the kernel evaluator.

    fourier_cutoff : modes ``|m|, |n| <= M`` of the far-field Fourier sum.
    image_radius : free-space images ``(m, n)`` in ``[-R, R]^2`` of the near field.
    switch_height : ``|z|`` at which the evaluator switches regimes.
    """

    fourier_cutoff: int = 24
    image_radius: int = 2
    switch_height: float = 0.5

    def __post_init__(self):
        if int(self.fourier_cutoff) != self.fourier_cutoff or self.fourier_cutoff < 2:
            raise ValueError("fourier_cutoff must be an integer >= 2")
        if int(self.image_radius) != self.image_radius or self.image_radius < 1:
            raise ValueError("image_radius must be an integer >= 1")
        if not 0.0 < self.switch_height <= 2.0:
            raise ValueError("switch_height must lie in (0, 2]")

    @property
    def ewald_split(self) -> float:
        # real-space tail erfc(xi (R + 1/2)) ~ 1e-17
        return 6.0 / (self.image_radius + 0.5)

    @property
    def ewald_modes(self) -> int:
        xi = self.ewald_split
        j = 1
        while True:
            tail = (2.0 / math.pi) * sum(
                math.exp(-(math.pi * i / xi) ** 2) for i in range(j + 1, j + 40)
            )
            if tail < 1e-17 and 2.0 * math.pi * (j + 1) >= 2.0 * xi * xi * self.switch_height:
                return j
            j += 1


@dataclass(frozen=True)
class GreensEvaluation:
    value: float
    gradient: np.ndarray
    err_bound: float


def beta_coefficient(m: int, n: int, z: float) -> float:
    """Fourier coefficient of Gamma(., z) for the mode exp(2 pi i (m x1 + n x2))."""
    if m == 0 and n == 0:
        return 0.5 * abs(z)
    k = math.hypot(m, n)
    return -math.exp(-2.0 * math.pi * k * abs(z)) / (FOUR_PI * k)


def free_space(x1, x2, z):
    """Free-space kernel -1/(4 pi r) and its gradient (vectorised)."""
    x1, x2, z = np.broadcast_arrays(*map(np.asarray, (x1, x2, z)))
    r2 = x1 * x1 + x2 * x2 + z * z
    r = np.sqrt(r2)
    val = -1.0 / (FOUR_PI * r)
    c = 1.0 / (FOUR_PI * r2 * r)
    return val, np.stack([c * x1, c * x2, c * z], axis=-1)


# ---------------------------------------------------------------------------
# numba cores


@nb.njit(cache=True)
def _fourier_point(x1, x2, z, M):
    az = abs(z)
    sz = 1.0 if z >= 0.0 else -1.0
    val = 0.5 * az
    g1 = 0.0
    g2 = 0.0
    g3 = 0.5 * sz
    mag = 0.5 * az
    tp = 2.0 * math.pi
    # half lattice: m > 0 (any n), m == 0 (n > 0); pairs +-k combine to cos/sin
    for m in range(0, M + 1):
        n0 = -M if m > 0 else 1
        for n in range(n0, M + 1):
            k = math.sqrt(m * m + n * n)
            e = math.exp(-tp * k * az)
            if e == 0.0:
                continue
            beta = -e / (FOUR_PI * k)
            ph = tp * (m * x1 + n * x2)
            c = math.cos(ph)
            s = math.sin(ph)
            val += 2.0 * beta * c
            g1 += -2.0 * beta * tp * m * s
            g2 += -2.0 * beta * tp * n * s
            g3 += 2.0 * (0.5 * sz * e) * c
            mag += 2.0 * abs(beta)
    return val, g1, g2, g3, mag


@nb.njit(cache=True)
def _reduce(x):
    return x - math.floor(x + 0.5)


@nb.njit(cache=True)
def _ewald_point(x1, x2, z, xi, R, K, exclude_central):
    """Ewald sum for Gamma; optionally drops the central free-space term.

    With ``exclude_central`` the result is Gamma - Gamma_R3 for the
    minimum-image copy, computed without cancellation.
    """
    x1 = _reduce(x1)
    x2 = _reduce(x2)
    val = 0.0
    g1 = 0.0
    g2 = 0.0
    g3 = 0.0
    c2 = 2.0 * xi / _SQRT_PI
    for m in range(-R, R + 1):
        for n in range(-R, R + 1):
            d1 = x1 - m
            d2 = x2 - n
            rho2 = d1 * d1 + d2 * d2 + z * z
            rho = math.sqrt(rho2)
            if m == 0 and n == 0 and exclude_central:
                # -(erfc - 1)/rho = erf/rho, smooth at rho = 0
                if rho < 1e-4:
                    t = xi * xi * rho2
                    val += (c2 * (1.0 - t / 3.0 + t * t / 10.0)) / FOUR_PI
                    dphi_r = c2 * xi * xi * (-2.0 / 3.0 + 0.4 * t) / FOUR_PI
                else:
                    ef = math.erf(xi * rho)
                    val += ef / (rho * FOUR_PI)
                    dphi = (-ef / rho2 + c2 * math.exp(-xi * xi * rho2) / rho) / FOUR_PI
                    dphi_r = dphi / rho
                g1 += dphi_r * d1
                g2 += dphi_r * d2
                g3 += dphi_r * z
                continue
            ec = math.erfc(xi * rho)
            val -= ec / (rho * FOUR_PI)
            dphi = -ec / rho2 - c2 * math.exp(-xi * xi * rho2) / rho
            dphi_r = -dphi / (rho * FOUR_PI)
            g1 += dphi_r * d1
            g2 += dphi_r * d2
            g3 += dphi_r * z
    # reciprocal space
    tp = 2.0 * math.pi
    for m in range(0, K + 1):
        n0 = -K if m > 0 else 1
        for n in range(n0, K + 1):
            kx = tp * m
            ky = tp * n
            k = math.sqrt(kx * kx + ky * ky)
            a = k / (2.0 * xi)
            ep = math.exp(k * z) * math.erfc(a + xi * z)
            em = math.exp(-k * z) * math.erfc(a - xi * z)
            ph = kx * x1 + ky * x2
            c = math.cos(ph)
            s = math.sin(ph)
            # factor 2 from the +-k pair, 1/4 from -(pi/(4 pi))
            val -= 0.5 * c * (ep + em) / k
            g1 += 0.5 * kx * s * (ep + em) / k
            g2 += 0.5 * ky * s * (ep + em) / k
            g3 -= 0.5 * c * (ep - em)
    # zero mode
    val += 0.5 * (z * math.erf(xi * z) + math.exp(-xi * xi * z * z) / (xi * _SQRT_PI))
    g3 += 0.5 * math.erf(xi * z)
    return val, g1, g2, g3


@nb.njit(cache=True)
def _evaluate_many(x1, x2, z, M, xi, R, K, z0, out):
    for i in range(x1.shape[0]):
        if abs(z[i]) >= z0:
            v, a, b, c, _ = _fourier_point(x1[i], x2[i], z[i], M)
        else:
            v, a, b, c = _ewald_point(x1[i], x2[i], z[i], xi, R, K, False)
        out[i, 0] = v
        out[i, 1] = a
        out[i, 2] = b
        out[i, 3] = c


@nb.njit(cache=True)
def ewald_smooth_part(x1, x2, z, xi, R, K, out):
    """Gamma minus the minimum-image free-space kernel, with gradient."""
    for i in range(x1.shape[0]):
        v, a, b, c = _ewald_point(x1[i], x2[i], z[i], xi, R, K, True)
        out[i, 0] = v
        out[i, 1] = a
        out[i, 2] = b
        out[i, 3] = c


# ---------------------------------------------------------------------------
# error bounds


def _fourier_tail(z, M):
    az = abs(z)
    q = math.exp(-2.0 * math.pi * az)
    if q >= 1.0:
        return math.inf, math.inf
    val = (2.0 / math.pi) * q ** (M + 1) / (1.0 - q)
    s = q ** (M + 1) * ((M + 1) - M * q) / (1.0 - q) ** 2
    grad = (8.0 / math.sqrt(2.0)) * s
    return val, grad


def _ewald_tail(cfg: KernelConfig):
    xi = cfg.ewald_split
    R = cfg.image_radius
    K = cfg.ewald_modes
    val = 0.0
    grad = 0.0
    for j in range(R + 1, R + 60):
        rho = j - 0.5
        ec = math.erfc(xi * rho)
        val += 8 * j * ec / rho / FOUR_PI
        grad += 8 * j * (ec / rho**2 + 2 * xi / _SQRT_PI * math.exp(-(xi * rho) ** 2) / rho) / FOUR_PI
    for j in range(K + 1, K + 60):
        e = math.exp(-(math.pi * j / xi) ** 2)
        val += (2.0 / math.pi) * e
        grad += 8 * j * e / math.sqrt(2.0)
    return val, grad


class GreenKernel:
    """Evaluator of Gamma and its gradient for a fixed :class:`KernelConfig`.

    Instances are immutable and may be shared between threads.
    """

    def __init__(self, cfg: KernelConfig | None = None):
        self.cfg = cfg or KernelConfig()
        self.xi = self.cfg.ewald_split
        self.modes = self.cfg.ewald_modes
        self._near_tail = _ewald_tail(self.cfg)

    def evaluate_many(self, x1, x2, z):
        """Return an (N, 4) array of (value, d1, d2, dz) at the given points."""
        x1 = np.ascontiguousarray(x1, dtype=float).ravel()
        x2 = np.ascontiguousarray(x2, dtype=float).ravel()
        z = np.ascontiguousarray(z, dtype=float).ravel()
        r1 = x1 - np.floor(x1 + 0.5)
        r2 = x2 - np.floor(x2 + 0.5)
        if np.any(np.sqrt(r1 * r1 + r2 * r2 + z * z) < 1e-14):
            raise SingularPointError("kernel requested at a lattice point (0, 0, 0) mod Z^2")
        out = np.empty((x1.size, 4))
        cfg = self.cfg
        _evaluate_many(x1, x2, z, cfg.fourier_cutoff, self.xi, cfg.image_radius,
                       self.modes, cfg.switch_height, out)
        return out

    def error_bound(self, z, value_scale=1.0):
        """Certified absolute bounds (value, gradient) at height ``z``."""
        if abs(z) >= self.cfg.switch_height:
            tv, tg = _fourier_tail(z, self.cfg.fourier_cutoff)
            n_terms = (2 * self.cfg.fourier_cutoff + 1) ** 2
        else:
            tv, tg = self._near_tail
            n_terms = (2 * self.cfg.image_radius + 1) ** 2 + (2 * self.modes + 1) ** 2
        rnd = 16.0 * _EPS * (abs(value_scale) + abs(z) + 1.0) * math.log2(n_terms)
        return tv + rnd, tg + rnd

    def _check(self, x, z, tol):
        x = np.asarray(x, dtype=float)
        if x.shape != (2,):
            raise ValueError("x must be a point of T^2 (two coordinates)")
        row = self.evaluate_many(x[:1], x[1:], np.array([float(z)]))[0]
        ev, eg = self.error_bound(z, value_scale=row[0])
        return row, ev, eg

    def gamma(self, x, z, tol=None) -> GreensEvaluation:
        row, ev, eg = self._check(x, z, tol)
        if tol is not None and ev > tol:
            raise KernelAccuracyError(f"kernel error bound {ev:.3e} exceeds tolerance {tol:.3e}", ev)
        return GreensEvaluation(float(row[0]), row[1:].copy(), ev)

    def grad_gamma(self, x, z, tol=None) -> GreensEvaluation:
        row, ev, eg = self._check(x, z, tol)
        if tol is not None and eg > tol:
            raise KernelAccuracyError(f"gradient error bound {eg:.3e} exceeds tolerance {tol:.3e}", eg)
        return GreensEvaluation(float(row[0]), row[1:].copy(), eg)

    def far_field(self, x, z):
        """Fourier-series evaluation regardless of regime (for consistency checks)."""
        v, a, b, c, mag = _fourier_point(float(x[0]), float(x[1]), float(z), self.cfg.fourier_cutoff)
        tv, tg = _fourier_tail(z, self.cfg.fourier_cutoff)
        rnd = 16.0 * _EPS * (mag + 1.0) * math.log2((2 * self.cfg.fourier_cutoff + 1) ** 2)
        return GreensEvaluation(v, np.array([a, b, c]), max(tv, tg) + rnd)

    def near_field(self, x, z):
        """Ewald evaluation regardless of regime (for consistency checks)."""
        v, a, b, c = _ewald_point(float(x[0]), float(x[1]), float(z), self.xi,
                                  self.cfg.image_radius, self.modes, False)
        tv, tg = self._near_tail
        rnd = 16.0 * _EPS * (abs(v) + abs(z) + 1.0) * math.log2((2 * self.cfg.image_radius + 1) ** 2 + (2 * self.modes + 1) ** 2)
        return GreensEvaluation(v, np.array([a, b, c]), max(tv, tg) + rnd)


_DEFAULT = {}


def _kernel(cfg):
    cfg = cfg or KernelConfig()
    if cfg not in _DEFAULT:
        _DEFAULT[cfg] = GreenKernel(cfg)
    return _DEFAULT[cfg]


def gamma(x, z, cfg: KernelConfig | None = None, tol=None) -> GreensEvaluation:
    """Value (and gradient) of Gamma at ``(x, z)`` with a certified error bound."""
    return _kernel(cfg).gamma(x, z, tol)


def grad_gamma(x, z, cfg: KernelConfig | None = None, tol=None) -> GreensEvaluation:
    """Gradient of Gamma at ``(x, z)``; ``err_bound`` refers to the gradient."""
    return _kernel(cfg).grad_gamma(x, z, tol)
