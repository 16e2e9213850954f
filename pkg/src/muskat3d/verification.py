"""Acceptance checks, test corpora and the suite runner behind ``verify``.

Each check returns a :class:`CheckResult` with the measured value, the
threshold it is held to and a signed margin (positive means passing).
"""
from __future__ import annotations

import json
import math
import os
import subprocess
import sys
import tempfile
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .dn_operator import apply_dn, coercivity_check, dn_flat_oracle, dn_from_sheet
from .evolution import EvolveConfig, comparison_run, run
from .green_kernel import GreenKernel, KernelAccuracyError, KernelConfig
from .initial_data import fourier_sum, random_bandlimited, rescale_to_lip
from .layer_ops import LayerOperators, clear_cache
from .sphere_dn import random_sphere_points, real_spherical_harmonic, sphere_dn_at_point
from .torus_grid import HeightField, PeriodicGrid

SUITES = ("kernel", "layer", "dn", "evolve", "sphere", "bench", "all")

DENSITY_TOL = 1e-8


@dataclass
class CheckResult:
    key: str
    title: str
    passed: bool
    value: float
    threshold: float
    margin: float
    seconds: float = 0.0
    detail: dict = field(default_factory=dict)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return (f"{tag} [{self.key}] {self.title}: value {self.value:.4g} "
                f"threshold {self.threshold:.4g} margin {self.margin:+.3g} ({self.seconds:.1f} s)")

    def as_dict(self):
        return {"key": self.key, "title": self.title, "passed": self.passed, "value": self.value,
                "threshold": self.threshold, "margin": self.margin, "seconds": self.seconds,
                "detail": self.detail}


def _upper(key, title, value, limit, t0, **detail):
    value = float(value)
    ok = bool(np.isfinite(value) and value <= limit)
    return CheckResult(key, title, ok, value, limit, limit - value, time.perf_counter() - t0, detail)


def _lower(key, title, value, limit, t0, **detail):
    value = float(value)
    ok = bool(np.isfinite(value) and value >= limit)
    return CheckResult(key, title, ok, value, limit, value - limit, time.perf_counter() - t0, detail)


# ---------------------------------------------------------------------------
# corpora


def reference_shape(grid: PeriodicGrid):
    """0.2 sin(2 pi x1) + 0.1 cos(2 pi (x1 + x2))."""
    return fourier_sum(grid, [(1, 0, 0.2, -0.5 * math.pi), (1, 1, 0.1, 0.0)])


def band_modes(grid: PeriodicGrid, kmax=8, seed=1):
    """Random combination of every mode with 0 < |k| <= kmax."""
    rng = np.random.default_rng(seed)
    x1, x2 = grid.nodes
    g = np.zeros((grid.n, grid.n))
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if 0 < k1 * k1 + k2 * k2 <= kmax * kmax:
                g += rng.normal() * np.cos(2 * np.pi * (k1 * x1 + k2 * x2) + rng.uniform(0, 2 * np.pi))
    return g


def layer_corpus(n=64):
    """Five smooth heights with Lipschitz constants from 0.25 to 1.5."""
    G = PeriodicGrid(n)
    two = fourier_sum(G, [(1, 0, 1.0, 0.0), (0, 1, 1.0, 0.3)])
    return [
        ("two_mode_lip0.5", rescale_to_lip(two, 0.5)),
        ("random_s1_lip0.25", random_bandlimited(G, 1, 3, 0.25)),
        ("random_s2_lip0.75", random_bandlimited(G, 2, 3, 0.75)),
        ("random_s3_lip1", random_bandlimited(G, 3, 3, 1.0)),
        ("random_s4_lip1.5", random_bandlimited(G, 4, 3, 1.5)),
    ]


def coercivity_corpus(n=64, size=20):
    """Mean-zero random fields with lip spread over [0.1, 2] and bands 2 to 4."""
    G = PeriodicGrid(n)
    out = []
    for i in range(size):
        lip = 0.1 + 1.9 * i / max(size - 1, 1)
        band = 2 + i % 3
        v = random_bandlimited(G, 100 + i, band, lip)
        out.append((f"random_s{100 + i}_b{band}_lip{lip:.3g}", v - v.mean()))
    return out


def reference_runs(n=64):
    """The three maximum-principle runs: (label, initial values)."""
    G = PeriodicGrid(n)
    shape = reference_shape(G)
    return [
        ("shape_lip2", rescale_to_lip(shape, 2.0)),
        ("shape_lip0.5", rescale_to_lip(shape, 0.5)),
        ("random_s7_lip1", random_bandlimited(G, 7, 3, 1.0)),
    ]


def ordered_pairs(n=32):
    """Three pairs (label, low, high) with high >= low at every node."""
    G = PeriodicGrid(n)
    x1, x2 = G.nodes
    low1 = random_bandlimited(G, 11, 3, 1.0)
    high1 = low1 + 0.05 * (1 + np.cos(2 * np.pi * x1))
    low2 = random_bandlimited(G, 12, 3, 0.8)
    bump = random_bandlimited(G, 13, 2, 0.5)
    high2 = low2 + 0.02 + (bump - bump.min())
    low3 = rescale_to_lip(reference_shape(G), 1.0)
    high3 = low3 + 0.03 * (1 + np.sin(2 * np.pi * (x1 + x2)))
    return [("random_bump", low1, high1), ("random_random", low2, high2),
            ("shape_wave", low3, high3)]


def load_coercivity_envelope():
    ref = resources.files("muskat3d") / "data" / "coercivity_envelope.json"
    return json.loads(ref.read_text())


# ---------------------------------------------------------------------------
# individual checks


def check_kernel(cfg: KernelConfig | None = None, tol=1e-10):
    """Far-field value, symmetry, free-space limit, regime agreement and certified bounds."""
    t0 = time.perf_counter()
    k = GreenKernel(cfg)
    errs = {}
    try:
        # certified evaluation on both sides of the regime switch
        for z in (0.05, 0.3, 0.6, 1.0, 5.0):
            k.grad_gamma((0.17, 0.41), z, tol=tol)
            k.gamma((0.17, 0.41), z, tol=tol)
    except KernelAccuracyError as exc:
        return CheckResult("kernel", "Green's function oracles", False, exc.bound, tol,
                           tol - exc.bound, time.perf_counter() - t0, {"error": str(exc)})
    errs["far_value"] = abs(k.gamma((0.3, 0.3), 5.0).value - 2.5)
    errs["dz_far"] = abs(k.grad_gamma((0.1, 0.7), 12.0).gradient[2] - 0.5)
    a = k.gamma((0.21, 0.37), 0.13).value
    errs["symmetry"] = max(abs(a - k.gamma((0.21, 0.37), -0.13).value),
                           abs(a - k.gamma((-0.21, 0.37), 0.13).value))
    ratios = []
    for r in (1e-2, 1e-3, 1e-4):
        x = r * np.array([0.6, 0.0])
        ratios.append(abs(k.gamma(x, 0.8 * r).value * (-4 * np.pi * r) - 1))
    gap = 0.0
    for z in (0.25, 0.5, 1.0):
        near = k.near_field((0.31, 0.12), z)
        far = k.far_field((0.31, 0.12), z)
        gap = max(gap, abs(near.value - far.value) / (near.err_bound + far.err_bound + 1e-15))
    errs["regime_gap_over_bound"] = gap
    worst = max(errs["far_value"], errs["dz_far"], errs["symmetry"])
    ok_ratio = ratios[0] > ratios[1] > ratios[2]
    res = _upper("kernel", "Green's function oracles", worst, 1e-12, t0,
                 free_space_ratio_error=ratios, **{k_: float(v) for k_, v in errs.items()})
    res.passed = res.passed and ok_ratio and gap <= 1.0
    return res


def check_kernel_forced_failure():
    """A truncated far-field series must report an accuracy failure."""
    t0 = time.perf_counter()
    try:
        GreenKernel(KernelConfig(fourier_cutoff=2, switch_height=0.5)).gamma((0.1, 0.2), 0.6, tol=1e-12)
    except KernelAccuracyError as exc:
        return _lower("kernel_fail", "truncated kernel flagged", exc.bound, 1e-12, t0)
    return CheckResult("kernel_fail", "truncated kernel flagged", False, 0.0, 1e-12, -1e-12,
                       time.perf_counter() - t0)


def check_flat_oracle(n=64, n_fine=128):
    """Criterion 1: flat-interface oracle and its refinement order."""
    t0 = time.perf_counter()
    errs = []
    for m in (n, n_fine):
        G = PeriodicGrid(m)
        g = band_modes(G, 8)
        r = apply_dn(HeightField(G, np.zeros((m, m))), g, tol=DENSITY_TOL)
        ex = dn_flat_oracle(g)
        errs.append(float(np.linalg.norm(r.values - ex) / np.linalg.norm(ex)))
    order = math.log2(errs[0] / errs[1]) if errs[1] > 0 else math.inf
    res = _upper("1", "flat-interface oracle", errs[0], 1e-3, t0,
                 n=n, n_fine=n_fine, errors=errs, observed_order=order)
    res.passed = res.passed and order >= 1.0 and res.seconds <= 60.0
    return res


def check_gauss(n=64):
    """Criterion 2: K[f]1 = 0 on the layer corpus."""
    t0 = time.perf_counter()
    per = {}
    for label, v in layer_corpus(n):
        ops = LayerOperators(HeightField(PeriodicGrid(n), v))
        per[label] = float(np.abs(ops.double_layer(np.ones((n, n)))).max())
        del ops
    return _upper("2", "Gauss identity K[f]1 = 0", max(per.values()), 1e-3, t0, n=n, per_field=per)


def check_relations(n=64, tol=DENSITY_TOL):
    """Criterion 3: tangential relations of the density with g = f.

    Residual r_j = 1/2 d_j theta - V . T_j - d_j g in the sup norm, against
    10 tol; the two DN routes are compared as well.
    """
    t0 = time.perf_counter()
    per, paths = {}, {}
    for label, v in layer_corpus(n):
        ops = LayerOperators(HeightField(PeriodicGrid(n), v))
        d = ops.solve_density(v, tol=tol)
        r1, r2 = ops.relation_residuals(d, v)
        per[label] = float(max(np.abs(r1).max(), np.abs(r2).max()))
        w = ops.sheet_strength(d).w
        a = dn_from_sheet(ops, w, "single_layer_tangential")
        b = dn_from_sheet(ops, w, "cross_product")
        paths[label] = float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(v * v)))
        del ops
    res = _upper("3", "relation residuals", max(per.values()), 10 * tol, t0,
                 n=n, tol=tol, per_field=per, path_agreement_rel_l2=paths)
    return res


def evolve_config(n=64, **kw):
    """Settings of the reference runs (kappa 1, eps 0.01, t_end 0.5, cfl 1)."""
    base = dict(kappa=1.0, epsilon=0.01, t_end=0.5, n=n, cfl_safety=1.0)
    base.update(kw)
    return EvolveConfig(**base)


def reference_trajectories(n=64, cfg: EvolveConfig | None = None):
    cfg = cfg or evolve_config(n)
    out = {}
    for label, v in reference_runs(n):
        clear_cache()
        traj, rep = run(HeightField(PeriodicGrid(n), v, label), cfg)
        out[label] = rep
    return out


def check_max_principle(reports, budget=600.0):
    """Criterion 4: |f|_inf and |grad f|_inf non-increasing, each run within budget."""
    t0 = time.perf_counter()
    worst = 0.0
    flags = {}
    for label, rep in reports.items():
        for series in (rep.linf_series, rep.lip_series):
            s = np.asarray(series)
            worst = max(worst, float(np.max(s[1:] / s[:-1] - 1.0, initial=-1.0)))
        flags[label] = {"linf": rep.monotone_linf, "lip": rep.monotone_lip,
                        "wall_clock": rep.wall_clock, "outputs": len(rep.times)}
    res = _upper("4", "maximum principles", worst, 1e-6, t0, runs=flags)
    res.passed = (res.passed and all(r.monotone_linf and r.monotone_lip for r in reports.values())
                  and all(r.wall_clock <= budget for r in reports.values()))
    res.seconds = max(r.wall_clock for r in reports.values())
    return res


def check_mean(reports, comparisons=None):
    """Criterion 5: mean conservation over every run."""
    t0 = time.perf_counter()
    drift = {k: r.mean_drift for k, r in reports.items()}
    for k, c in (comparisons or {}).items():
        drift[k] = c["mean_drift"]
    return _upper("5", "mean conservation", max(drift.values()), 1e-10, t0, drift=drift)


def check_decay(reports, low="shape_lip0.5", high="shape_lip2"):
    """Criterion 6: strictly decreasing L2 norm, positive rate, ordering across lip0."""
    t0 = time.perf_counter()
    rates = {k: r.fitted_l2_rate for k, r in reports.items()}
    info = {k: {"rate": r.fitted_l2_rate, "c_fit": r.c_fit, "floor": r.predicted_rate_floor,
                "lip0": r.lip0, "monotone_l2": r.monotone_l2} for k, r in reports.items()}
    ordered = reports[low].predicted_rate_floor >= reports[high].predicted_rate_floor
    res = _lower("6", "L2 decay", min(rates.values()), 0.0, t0, runs=info,
                 floor_ordering=bool(ordered),
                 rate_ordering=bool(rates[low] >= rates[high]))
    res.passed = (res.passed and min(rates.values()) > 0
                  and all(r.monotone_l2 for r in reports.values()) and ordered)
    return res


def comparison_reports(n=32, t_end=0.3):
    out = {}
    cfg = EvolveConfig(kappa=1.0, epsilon=0.01, t_end=t_end, n=n)
    G = PeriodicGrid(n)
    for label, lo, hi in ordered_pairs(n):
        clear_cache()
        rep = comparison_run(HeightField(G, lo), HeightField(G, hi), cfg)
        out[label] = rep
    return out


def check_comparison(reports):
    """Criterion 7: sup-distance contraction and preserved ordering."""
    t0 = time.perf_counter()
    worst = max(r.max_ratio for r in reports.values())
    gap = min(r.min_gap for r in reports.values())
    res = _upper("7", "comparison and contraction", worst, 1 + 1e-3, t0, min_gap=gap,
                 pairs={k: {"max_ratio": r.max_ratio, "min_gap": r.min_gap} for k, r in reports.items()})
    res.passed = res.passed and gap >= -1e-6
    return res


def coercivity_table(n=64, tol=DENSITY_TOL):
    rows = []
    G = PeriodicGrid(n)
    for label, v in coercivity_corpus(n):
        clear_cache()
        rep = coercivity_check(HeightField(G, v), tol=tol, floor=-math.inf)
        rows.append({"label": label, **rep.as_dict()})
    return rows


def check_coercivity(n=64, rows=None):
    """Criterion 8: pairing positivity and the pinned ratio envelope."""
    t0 = time.perf_counter()
    rows = rows if rows is not None else coercivity_table(n)
    pairing = min(r["pairing"] for r in rows)
    ratio = min(r["ratio"] for r in rows)
    env = load_coercivity_envelope()
    pinned = env.get(str(n), {}).get("min_ratio_floor")
    res = _lower("8", "coercivity", pairing, -1e-6, t0, min_ratio=ratio, pinned_floor=pinned,
                 rows=rows)
    res.passed = res.passed and ratio > 0 and (pinned is None or ratio >= pinned)
    return res


def check_sphere(points=10, seed=0, tol=1e-8, budget=30.0):
    """Criterion 9: spherical harmonics are DN eigenfunctions with eigenvalue l."""
    t0 = time.perf_counter()
    pts = random_sphere_points(points, seed)
    worst = 0.0
    per_l = {}
    for l in range(4):
        e_l = 0.0
        for m in range(-l, l + 1):
            Y = real_spherical_harmonic(l, m)
            for x in pts:
                v = sphere_dn_at_point(Y, x, tol=tol).value
                exact = l * float(Y(x))
                err = abs(v - exact)
                e_l = max(e_l, err)
                worst = max(worst, err / max(tol, 1e-2 * abs(exact) + 1e-6))
        per_l[l] = e_l
    res = _upper("9", "sphere DN eigenvalues", worst, 1.0, t0, max_abs_error=per_l,
                 scaled="error / max(tol, 1e-2 |l Y| + 1e-6)")
    res.passed = res.passed and res.seconds <= budget
    return res


def _dn_bytes(threads, n=32, seed=3, lip=1.0):
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "dn.csv"
        env = dict(os.environ, MUSKAT3D_THREADS=str(threads))
        cmd = [sys.executable, "-m", "muskat3d", "dn", "--n", str(n), "--kind", "random_bandlimited",
               "--seed", str(seed), "--lip", str(lip), "--out", str(out)]
        subprocess.run(cmd, check=True, env=env, capture_output=True)
        return out.read_bytes()


def dn_timing(n, seed=3, lip=1.0, repeats=1):
    G = PeriodicGrid(n)
    v = random_bandlimited(G, seed, 3, lip)
    best = math.inf
    for _ in range(repeats):
        clear_cache()
        t0 = time.perf_counter()
        apply_dn(HeightField(G, v), v, tol=DENSITY_TOL)
        best = min(best, time.perf_counter() - t0)
    clear_cache()
    return best


def check_determinism_scaling(threads=(1, 4)):
    """Criterion 10: identical CSV bytes across thread counts; n = 32 -> 64 cost ratio."""
    t0 = time.perf_counter()
    blobs = [_dn_bytes(t) for t in threads]
    identical = all(b == blobs[0] for b in blobs)
    dn_timing(32)                         # warm the compiled kernels
    t32 = dn_timing(32, repeats=2)
    t64 = dn_timing(64, repeats=2)
    ratio = t64 / t32
    ok = identical and 12.0 <= ratio <= 22.0
    margin = min(ratio - 12.0, 22.0 - ratio)
    return CheckResult("10", "determinism and scaling", bool(ok), ratio, 12.0, margin,
                       time.perf_counter() - t0,
                       {"identical_bytes": identical, "threads": list(threads),
                        "t32": t32, "t64": t64, "window": [12.0, 22.0],
                        "cores": os.cpu_count()})


# ---------------------------------------------------------------------------
# suite runner


def run_suite(suite="all", n=64, log=print, kernel_cfg: KernelConfig | None = None, tol=1e-10):
    """Run a verification suite; ``n`` sets the grid of the grid-based checks.

    The acceptance settings are n = 64 (runs of criterion 7 use n // 2).
    """
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; expected one of {SUITES}")
    results = []

    def emit(r):
        results.append(r)
        if log:
            log(r.line())

    if suite in ("kernel", "all"):
        emit(check_kernel(kernel_cfg, tol))
        emit(check_kernel_forced_failure())
    if suite in ("layer", "all"):
        emit(check_gauss(n))
        emit(check_relations(n))
    if suite in ("dn", "all"):
        emit(check_flat_oracle(n, 2 * n))
        emit(check_coercivity(n))
    if suite in ("evolve", "all"):
        reps = reference_trajectories(n)
        comps = comparison_reports(max(n // 2, 16))
        emit(check_max_principle(reps))
        emit(check_mean(reps, {k: {"mean_drift": c.mean_drift} for k, c in comps.items()}))
        emit(check_decay(reps))
        emit(check_comparison(comps))
    if suite in ("sphere", "all"):
        emit(check_sphere())
    if suite in ("bench", "all"):
        emit(check_determinism_scaling())
    return results


def summary(results):
    return {"passed": all(r.passed for r in results),
            "checks": [r.as_dict() for r in results]}
