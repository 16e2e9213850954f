"""Dirichlet-Neumann operator G(f) of the lower region below a periodic graph.

G(f)g is the (unnormalised) normal derivative N . grad phi on the surface of
the harmonic function phi with trace g that decays to a constant as z -> -inf.
Two quadrature routes are available from the same sheet strength w:

* ``single_layer_tangential``: G = T2 . d_T1 S w - T1 . d_T2 S w
* ``cross_product``:          G = -p.v. int (grad Gamma x w') . N
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .green_kernel import KernelConfig
from .layer_ops import LayerOperators, operators, _check_grid
from .torus_grid import HeightField, PeriodicGrid, norms, write_field_csv

PATHS = ("single_layer_tangential", "cross_product")


@dataclass(frozen=True, eq=False)
class DnResult:
    grid: PeriodicGrid
    values: np.ndarray
    mean_abs: float
    pairing: float
    path: str
    tol: float = 1e-8
    iterations: int = 0
    timing: dict = field(default_factory=dict)

    def save_csv(self, path, meta=None):
        m = {"path": self.path, "tol": self.tol, "mean_abs": self.mean_abs,
             "pairing": self.pairing, "iterations": self.iterations, "timing": self.timing}
        m.update(meta or {})
        write_field_csv(path, self.grid, {"dn": self.values}, m)


def dn_from_sheet(ops: LayerOperators, w, path="single_layer_tangential"):
    if path == "single_layer_tangential":
        d1, d2 = ops.single_layer_tangential(w)
        return np.sum(ops.t2 * d1 - ops.t1 * d2, axis=0)
    if path == "cross_product":
        return -np.sum(ops.cross_integral(w) * ops.normal, axis=0)
    raise ValueError(f"unknown path {path!r}; expected one of {PATHS}")


def apply_dn(f: HeightField, g, tol=1e-8, cfg: KernelConfig | None = None,
             path="single_layer_tangential", ops: LayerOperators | None = None,
             quad=None) -> DnResult:
    if path not in PATHS:
        raise ValueError(f"unknown path {path!r}; expected one of {PATHS}")
    g = _check_grid(f, g)
    t0 = time.perf_counter()
    ops = ops or operators(f, cfg, quad)
    t1 = time.perf_counter()
    # constants lie in the kernel of G; removing the mean makes that exact
    dens = ops.solve_density(g - g.mean(), tol=tol)
    t2 = time.perf_counter()
    w = ops.sheet_strength(dens).w
    values = dn_from_sheet(ops, w, path)
    t3 = time.perf_counter()
    h2 = 1.0 / g.size
    return DnResult(
        grid=f.grid,
        values=values,
        mean_abs=float(abs(values.mean())),
        pairing=float(h2 * np.sum(values * g)),
        path=path,
        tol=tol,
        iterations=dens.iterations,
        timing={"build": t1 - t0, "solve": t2 - t1, "apply": t3 - t2, "total": t3 - t0},
    )


def dn_flat_oracle(g):
    """Exact G(0): the Fourier multiplier 2 pi |k|."""
    g = np.asarray(g.values if isinstance(g, HeightField) else g, dtype=float)
    k = np.fft.fftfreq(g.shape[0], d=1.0 / g.shape[0])
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    return np.real(np.fft.ifft2(2 * np.pi * np.hypot(k1, k2) * np.fft.fft2(g)))


@dataclass(frozen=True)
class CoercivityReport:
    pairing: float
    h_half_sq: float
    lip: float
    ratio: float | None     # None when f has no H^{1/2} content

    def as_dict(self):
        return {"pairing": self.pairing, "h_half_sq": self.h_half_sq, "lip": self.lip,
                "ratio": self.ratio}


def coercivity_check(f: HeightField, tol=1e-8, cfg: KernelConfig | None = None,
                     floor=-1e-6) -> CoercivityReport:
    """Pairing (G(f)f, f) against ||f||^2_{H^1/2} / (1 + lip f); f must be mean-zero."""
    if abs(f.mean) > 1e-12 * max(1.0, np.abs(f.values).max()):
        raise ValueError("coercivity_check expects a mean-zero field; subtract the mean first")
    nr = norms(f)
    if nr.h_half_sq == 0.0:
        return CoercivityReport(0.0, 0.0, nr.lip, None)
    res = apply_dn(f, f.values, tol=tol, cfg=cfg)
    if res.pairing < floor:
        raise AssertionError(f"negative pairing {res.pairing:.3e} below {floor}")
    return CoercivityReport(res.pairing, nr.h_half_sq, nr.lip,
                            res.pairing * (1.0 + nr.lip) / nr.h_half_sq)


def save_report(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=float))
