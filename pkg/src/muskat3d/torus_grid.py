"""Periodic collocation grid on the unit torus and the norms used by diagnostics."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform ``n x n`` grid on [0, 1)^2; node (i, j) sits at (i h, j h)."""

    n_per_side: int

    def __post_init__(self):
        n = self.n_per_side
        if int(n) != n or n < 8 or n % 2:
            raise ValueError("n_per_side must be an even integer >= 8")
        if n & (n - 1):
            raise ValueError("n_per_side must be a power of two")

    @property
    def n(self) -> int:
        return self.n_per_side

    @property
    def h(self) -> float:
        return 1.0 / self.n_per_side

    @property
    def nodes(self):
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    @property
    def wavenumbers(self):
        """Integer wavenumbers (m, n) laid out like ``np.fft.fft2`` output."""
        k = np.fft.fftfreq(self.n, d=1.0 / self.n)
        return np.meshgrid(k, k, indexing="ij")

    def sample(self, func):
        x1, x2 = self.nodes
        return np.asarray(func(x1, x2), dtype=float) * np.ones((self.n, self.n))


@dataclass(frozen=True, eq=False)
class HeightField:
    grid: PeriodicGrid
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n, self.grid.n):
            raise ValueError(f"values must have shape {(self.grid.n, self.grid.n)}")
        if not np.all(np.isfinite(v)):
            raise ValueError("height field contains non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid, func, label=""):
        return cls(grid, grid.sample(func), label)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def with_values(self, values, label=None):
        return HeightField(self.grid, values, self.label if label is None else label)


@dataclass(frozen=True)
class NormReport:
    l2: float
    l_inf: float
    lip: float
    holder: dict = field(default_factory=dict)
    h_half_sq: float = 0.0
    mean: float = 0.0


def _values(f):
    return f.values if isinstance(f, HeightField) else np.asarray(f, dtype=float)


def _symbol(n):
    k = np.fft.fftfreq(n, d=1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    return k1, k2


def _nyquist_free(n, k1, k2):
    # the Nyquist row/column of an odd derivative has no real counterpart
    return np.where(np.abs(k1) == n // 2, 0.0, k1), np.where(np.abs(k2) == n // 2, 0.0, k2)


def spectral_derivative(v, order=(1, 0)):
    """Fourier derivative ``d1^a d2^b v`` over the last two axes of ``v``."""
    v = np.asarray(v, dtype=float)
    n = v.shape[-1]
    k1, k2 = _symbol(n)
    a, b = order
    if a % 2 or b % 2:
        k1, k2 = _nyquist_free(n, k1, k2)
    mult = (2j * np.pi * k1) ** a * (2j * np.pi * k2) ** b
    return np.real(np.fft.ifft2(mult * np.fft.fft2(v)))


def spectral_gradient(f):
    """Spectral gradient (d1 f, d2 f) over the last two axes.

    Returns HeightFields for HeightField input.
    """
    v = _values(f)
    n = v.shape[-1]
    k1, k2 = _nyquist_free(n, *_symbol(n))
    fh = np.fft.fft2(v)
    d1 = np.real(np.fft.ifft2(2j * np.pi * k1 * fh))
    d2 = np.real(np.fft.ifft2(2j * np.pi * k2 * fh))
    if isinstance(f, HeightField):
        return f.with_values(d1, f.label + ":d1"), f.with_values(d2, f.label + ":d2")
    return d1, d2


def laplacian(v):
    v = _values(v)
    k1, k2 = _symbol(v.shape[0])
    return np.real(np.fft.ifft2(-4 * np.pi**2 * (k1**2 + k2**2) * np.fft.fft2(v)))


def fourier_coefficients(v):
    """Normalised coefficients so that v = sum_k c_k exp(2 pi i k.x)."""
    v = _values(v)
    return np.fft.fft2(v) / v.size


def holder_seminorm(v, alpha, h):
    """Dyadic estimate of the C^alpha seminorm along the grid axes."""
    n = v.shape[0]
    best = 0.0
    k = 1
    while k <= n // 2:
        d = k * h
        for axis in (0, 1):
            diff = np.abs(np.roll(v, -k, axis=axis) - v).max()
            best = max(best, diff / d**alpha)
        k *= 2
    return best


def norms(f, holder_exponents=()):
    """L2, sup, Lipschitz, dyadic Hoelder, H^{1/2} seminorm and mean of ``f``."""
    for a in holder_exponents:
        if not 0.0 < a < 1.0:
            raise ValueError(f"Hoelder exponent {a} outside (0, 1)")
    v = _values(f)
    n = v.shape[0]
    h = 1.0 / n
    d1, d2 = spectral_gradient(v)
    c = fourier_coefficients(v)
    k1, k2 = _symbol(n)
    return NormReport(
        l2=float(np.sqrt(h * h * np.sum(v * v))),
        l_inf=float(np.abs(v).max()),
        lip=float(np.sqrt(d1 * d1 + d2 * d2).max()),
        holder={a: holder_seminorm(v, a, h) for a in holder_exponents},
        h_half_sq=float(np.sum(2 * np.pi * np.hypot(k1, k2) * np.abs(c) ** 2)),
        mean=float(v.mean()),
    )


def _gaussian_weights(n, scale):
    x = np.arange(n) / n
    x = np.minimum(x, 1.0 - x)
    w = sum(np.exp(-0.5 * ((x + m) / scale) ** 2) for m in range(-3, 4))
    return w / w.sum()


def mollify(f, scale):
    """Convolve with the periodic Gaussian of standard deviation ``scale``.

    The Gaussian is sampled on the grid and normalised to unit sum, so the
    discrete kernel is positive: the mean is kept and neither the sup norm
    nor difference quotients can grow.
    """
    if not 0.0 < scale <= 0.25:
        raise ValueError("mollifier scale must lie in (0, 1/4]")
    v = _values(f)
    w = _gaussian_weights(v.shape[0], scale)
    mult = np.fft.fft(w)
    out = np.real(np.fft.ifft2(mult[:, None] * mult[None, :] * np.fft.fft2(v)))
    out += v.mean() - out.mean()
    if isinstance(f, HeightField):
        return f.with_values(out)
    return out


def _upsample_axis(v, factor, axis):
    n = v.shape[axis]
    m = n * factor
    h = n // 2
    c = np.moveaxis(np.fft.fft(v, axis=axis), axis, 0)
    big = np.zeros((m,) + c.shape[1:], dtype=complex)
    big[:h] = c[:h]
    big[m - h + 1:] = c[h + 1:]
    # split the Nyquist mode between +h and -h so the result stays real
    big[h] = 0.5 * c[h]
    big[m - h] = 0.5 * c[h]
    out = np.fft.ifft(np.moveaxis(big, 0, axis), axis=axis) * factor
    return out


def fourier_upsample(v, factor):
    """Band-limited interpolation of a periodic array onto a ``factor``-finer grid."""
    v = np.asarray(v, dtype=float)
    if factor == 1:
        return v.copy()
    return np.real(_upsample_axis(_upsample_axis(v, factor, 0), factor, 1))


# ---------------------------------------------------------------------------
# serialization


def _fmt(x):
    return format(float(x), ".17g")


def write_field_csv(path, grid, columns, meta=None):
    """Write ``i,j,<columns...>`` rows plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    names = list(columns)
    arrays = [np.asarray(columns[c]) for c in names]
    n = grid.n
    with open(path, "w") as fh:
        fh.write(",".join(["i", "j"] + names) + "\n")
        for i in range(n):
            for j in range(n):
                fh.write(",".join([str(i), str(j)] + [_fmt(a[i, j]) for a in arrays]) + "\n")
    side = {"n": n}
    side.update(meta or {})
    with open(path.with_suffix(path.suffix + ".json"), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)


def read_field_csv(path):
    """Inverse of :func:`write_field_csv`; returns (grid, {column: array}, meta)."""
    path = Path(path)
    with open(path.with_suffix(path.suffix + ".json")) as fh:
        meta = json.load(fh)
    grid = PeriodicGrid(int(meta["n"]))
    raw = np.genfromtxt(path, delimiter=",", names=True)
    names = [c for c in raw.dtype.names if c not in ("i", "j")]
    ii = raw["i"].astype(int)
    jj = raw["j"].astype(int)
    cols = {}
    for c in names:
        a = np.empty((grid.n, grid.n))
        a[ii, jj] = raw[c]
        cols[c] = a
    return grid, cols, meta


def save_height_csv(field_, path):
    write_field_csv(path, field_.grid, {"value": field_.values}, {"label": field_.label})


def load_height_csv(path):
    grid, cols, meta = read_field_csv(path)
    return HeightField(grid, cols["value"], meta.get("label", ""))


def save_height_binary(field_, path):
    """Little-endian float64, row-major (index i slowest)."""
    np.ascontiguousarray(field_.values, dtype="<f8").tofile(path)


def load_height_binary(path, n, label=""):
    v = np.fromfile(path, dtype="<f8")
    return HeightField(PeriodicGrid(n), v.reshape(n, n), label)
