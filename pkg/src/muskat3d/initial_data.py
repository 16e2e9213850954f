"""Initial height fields: Fourier sums, random band-limited fields, files."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .torus_grid import (HeightField, PeriodicGrid, load_height_binary, load_height_csv,
                         mollify, spectral_gradient)

KINDS = ("fourier_sum", "random_bandlimited", "sampled")


@dataclass(frozen=True)
class InitialDataSpec:
    kind: str = "fourier_sum"
    modes: tuple = ((1, 0, 0.1, 0.0),)   # (k1, k2, amplitude, phase): a cos(2 pi k.x + phase)
    seed: int = 0
    band: int = 3
    lip_target: float | None = None
    path: str = ""
    mollify_scale: float = 0.0
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown initial data kind {self.kind!r}")
        if self.lip_target is not None and self.lip_target < 0:
            raise ValueError("lip_target must be non-negative")
        if self.band < 1:
            raise ValueError("band must be >= 1")


def lipschitz(v):
    d1, d2 = spectral_gradient(v)
    return float(np.sqrt(d1 * d1 + d2 * d2).max())


def rescale_to_lip(v, lip_target):
    """Scale the oscillating part of v so that its spectral Lipschitz constant is lip_target."""
    m = v.mean()
    lip = lipschitz(v)
    if lip == 0.0:
        if lip_target == 0.0:
            return v.copy()
        raise ValueError("cannot rescale a constant field to a positive Lipschitz target")
    return m + (v - m) * (lip_target / lip)


def fourier_sum(grid: PeriodicGrid, modes):
    x1, x2 = grid.nodes
    v = np.zeros((grid.n, grid.n))
    for k1, k2, a, ph in modes:
        v += a * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + ph)
    return v


def random_bandlimited(grid: PeriodicGrid, seed=0, band=3, lip_target=None):
    """Mean-zero field with random modes 0 < max(|k1|, |k2|) <= band and 1/|k|^2 amplitude decay."""
    rng = np.random.default_rng(seed)
    x1, x2 = grid.nodes
    v = np.zeros((grid.n, grid.n))
    for k1 in range(0, band + 1):
        for k2 in range(-band, band + 1):
            if k1 == 0 and k2 <= 0:
                continue
            a = rng.normal() / (k1 * k1 + k2 * k2)
            ph = rng.uniform(0, 2 * np.pi)
            v += a * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + ph)
    v -= v.mean()
    if lip_target is not None:
        v = rescale_to_lip(v, lip_target)
    return v


def build(spec: InitialDataSpec, n: int) -> HeightField:
    grid = PeriodicGrid(n)
    if spec.kind == "fourier_sum":
        v = fourier_sum(grid, spec.modes)
    elif spec.kind == "random_bandlimited":
        v = random_bandlimited(grid, spec.seed, spec.band)
    else:
        p = Path(spec.path)
        f = load_height_binary(p, n) if p.suffix in (".bin", ".f64") else load_height_csv(p)
        if f.grid.n != n:
            raise ValueError(f"sampled field has n = {f.grid.n}, expected {n}")
        v = f.values
    if spec.mollify_scale > 0:
        v = mollify(v, spec.mollify_scale)
    if spec.lip_target is not None:
        v = rescale_to_lip(v, spec.lip_target)
    return HeightField(grid, v, spec.label or spec.kind)
