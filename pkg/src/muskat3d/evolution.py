"""Time stepping of  d_t f = -kappa G(f) f + eps Lap f  and its diagnostics.

The diffusion is integrated exactly in Fourier space (integrating factor),
the DN term is explicit:

    f_hat(t + dt) = exp(-eps |2 pi k|^2 dt) (f_hat - dt kappa (G(f) f)^)

with dt = min(dt_max, cfl h / max(1, |G(f) f|_inf)).  ``scheme="heun"``
gives the second-order integrating-factor Runge-Kutta variant.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from ._quadrature import QuadratureConfig
from .dn_operator import dn_from_sheet
from .green_kernel import KernelConfig
from .layer_ops import LayerOperators
from .torus_grid import (HeightField, NormReport, PeriodicGrid, mollify, norms,
                         write_field_csv)

log = __import__("logging").getLogger(__name__)


class EvolutionAborted(RuntimeError):
    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory or []


@dataclass(frozen=True)
class EvolveConfig:
    kappa: float = 1.0
    epsilon: float = 0.01
    t_end: float = 0.5
    dt_max: float = 0.02
    cfl_safety: float = 0.5
    n: int = 64
    mollify_scale: float = 0.0        # 0 disables the initial mollification
    kernel: KernelConfig = field(default_factory=KernelConfig)
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    output_stride: int = 1
    dn_tol: float = 1e-8
    holder_exponents: tuple = (0.5,)
    subtract_mean: bool = True
    scheme: str = "euler"

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.t_end <= 0 or self.dt_max <= 0:
            raise ValueError("t_end and dt_max must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError("cfl_safety must lie in (0, 1]")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")
        if self.scheme not in ("euler", "heun"):
            raise ValueError("scheme must be 'euler' or 'heun'")
        PeriodicGrid(self.n)

    @property
    def experimental(self):
        return self.epsilon == 0.0

    def echo(self):
        d = asdict(self)
        d["holder_exponents"] = list(self.holder_exponents)
        return d


@dataclass(frozen=True, eq=False)
class SimState:
    t: float
    f: HeightField
    norms: NormReport
    pairing: float = math.nan
    dt_last: float = 0.0

    @classmethod
    def initial(cls, f: HeightField, cfg: EvolveConfig):
        return cls(0.0, f, norms(f, cfg.holder_exponents))


class RunContext:
    """Reusable pieces between steps: the offset table and the last density."""

    def __init__(self):
        self.table = None
        self.theta = None
        self.dn_iterations = []

    def dn(self, f: HeightField, cfg: EvolveConfig):
        if np.ptp(f.values) == 0.0:
            return np.zeros_like(f.values)
        ops = LayerOperators(f, cfg.kernel, cfg.quadrature, table=self.table)
        self.table = ops.table
        g = f.values - f.values.mean()
        dens = ops.solve_density(g, tol=cfg.dn_tol, x0=self.theta)
        self.theta = dens.theta
        self.dn_iterations.append(dens.iterations)
        return dn_from_sheet(ops, ops.sheet_strength(dens).w)


def _heat_factor(n, eps, dt):
    k = np.fft.fftfreq(n, d=1.0 / n)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    return np.exp(-eps * 4 * np.pi**2 * (k1**2 + k2**2) * dt)


def _advance(v, rhs, dt, cfg):
    # exact diffusion of (v + dt rhs); the k = 0 factor is exactly one
    out = np.real(np.fft.ifft2(_heat_factor(v.shape[0], cfg.epsilon, dt) * np.fft.fft2(v + dt * rhs)))
    out += (v.mean() + dt * rhs.mean()) - out.mean()
    return out


def choose_dt(gf, cfg: EvolveConfig, remaining=math.inf):
    h = 1.0 / gf.shape[0]
    speed = max(1.0, float(np.abs(gf).max()))
    return min(cfg.dt_max, cfg.cfl_safety * h / speed, remaining)


def step(state: SimState, cfg: EvolveConfig, dt=None, ctx: RunContext | None = None,
         gf=None) -> SimState:
    """One integrating-factor step; ``gf`` may pass a precomputed G(f) f."""
    ctx = ctx or RunContext()
    f = state.f
    if gf is None:
        gf = ctx.dn(f, cfg)
    if not np.all(np.isfinite(gf)):
        raise EvolutionAborted(f"non-finite DN values at t = {state.t}")
    if dt is None:
        dt = choose_dt(gf, cfg, cfg.t_end - state.t)
    rhs = -cfg.kappa * gf
    new = _advance(f.values, rhs, dt, cfg)
    if cfg.scheme == "heun":
        f1 = f.with_values(new)
        rhs1 = -cfg.kappa * ctx.dn(f1, cfg)
        # IF-RK2: average of the propagated old slope and the new slope
        heat = _heat_factor(f.grid.n, cfg.epsilon, dt)
        half = np.real(np.fft.ifft2(heat * np.fft.fft2(f.values + 0.5 * dt * rhs)))
        new = half + 0.5 * dt * rhs1
        new += (f.values.mean() + 0.5 * dt * (rhs.mean() + rhs1.mean())) - new.mean()
    if not np.all(np.isfinite(new)):
        raise EvolutionAborted(f"non-finite height after step at t = {state.t}")
    fn = f.with_values(new)
    return SimState(state.t + dt, fn, norms(fn, cfg.holder_exponents), math.nan, dt)


@dataclass
class DecayReport:
    times: list
    l2_series: list
    holder_series: dict
    lip_series: list
    linf_series: list
    mean_series: list
    pairing_series: list
    dt_series: list
    fitted_l2_rate: float
    c_fit: float
    predicted_rate_floor: float
    monotone_lip: bool
    monotone_linf: bool
    monotone_l2: bool
    mean_drift: float
    lip0: float
    wall_clock: float = 0.0
    aborted: str = ""

    def as_dict(self):
        d = asdict(self)
        d["holder_series"] = {str(k): v for k, v in self.holder_series.items()}
        return d


def _non_increasing(x, rel=1e-6):
    x = np.asarray(x)
    return bool(np.all(x[1:] <= x[:-1] * (1 + rel) + 1e-300))


def _strictly_decreasing(x):
    x = np.asarray(x)
    return bool(np.all(x[1:] < x[:-1]))


def fit_rate(times, l2, t_from):
    """Least-squares slope of -log l2 over times >= t_from (nan if undefined)."""
    t = np.asarray(times)
    y = np.asarray(l2)
    sel = (t >= t_from - 1e-14) & (y > 0)
    if sel.sum() < 2:
        return math.nan
    slope = np.polyfit(t[sel], np.log(y[sel]), 1)[0]
    return float(-slope)


def decay_report(traj, cfg: EvolveConfig, wall=0.0, aborted="") -> DecayReport:
    times = [s.t for s in traj]
    l2 = [s.norms.l2 for s in traj]
    lip = [s.norms.lip for s in traj]
    linf = [s.norms.l_inf for s in traj]
    mean = [s.norms.mean for s in traj]
    hs = {a: [s.norms.holder[a] for s in traj] for a in cfg.holder_exponents}
    pair = [s.pairing for s in traj]
    lip0 = lip[0]
    rate = fit_rate(times, l2, 0.5 * times[-1]) if l2[0] > 0 else math.nan
    # empirical coercivity constant along the run, in the normalisation where
    # the L2 decay rate is at least c kappa / (1 + lip0)
    ratios = [2 * np.pi * p * (1 + lip0) / s.norms.h_half_sq
              for s, p in zip(traj, pair) if s.norms.h_half_sq > 0 and np.isfinite(p)]
    c_fit = float(min(ratios)) if ratios else math.nan
    floor = c_fit * cfg.kappa / (1 + lip0) if ratios else math.nan
    return DecayReport(
        times=times, l2_series=l2, holder_series=hs, lip_series=lip, linf_series=linf,
        mean_series=mean, pairing_series=pair, dt_series=[s.dt_last for s in traj],
        fitted_l2_rate=rate, c_fit=c_fit, predicted_rate_floor=floor,
        monotone_lip=_non_increasing(lip), monotone_linf=_non_increasing(linf),
        monotone_l2=_strictly_decreasing(l2) if l2[0] > 0 else False,
        mean_drift=float(max(abs(m - mean[0]) for m in mean)), lip0=lip0,
        wall_clock=wall, aborted=aborted)


def prepare_initial(f0: HeightField, cfg: EvolveConfig) -> HeightField:
    if f0.grid.n != cfg.n:
        raise ValueError(f"initial data on n = {f0.grid.n}, config says n = {cfg.n}")
    f = mollify(f0, cfg.mollify_scale) if cfg.mollify_scale > 0 else f0
    if cfg.subtract_mean:
        f = f.with_values(f.values - f.values.mean())
    return f


def run(f0: HeightField, cfg: EvolveConfig, on_snapshot=None):
    """Evolve to t_end; returns (trajectory of output states, DecayReport).

    On failure the partial trajectory is attached to the raised
    ``EvolutionAborted``.
    """
    start = time.perf_counter()
    ctx = RunContext()
    state = SimState.initial(prepare_initial(f0, cfg), cfg)
    traj = []
    k = 0
    try:
        while True:
            gf = ctx.dn(state.f, cfg)
            state = replace(state, pairing=float(np.mean(gf * state.f.values)))
            done = state.t >= cfg.t_end * (1 - 1e-12)
            if k % cfg.output_stride == 0 or done:
                traj.append(state)
                if on_snapshot:
                    on_snapshot(len(traj) - 1, state)
            if done:
                break
            state = step(state, cfg, ctx=ctx, gf=gf)
            k += 1
    except EvolutionAborted as exc:
        exc.trajectory = traj
        raise
    except Exception as exc:
        raise EvolutionAborted(f"step {k} at t = {state.t}: {exc}", traj) from exc
    rep = decay_report(traj, cfg, time.perf_counter() - start)
    log.info("run finished: %d steps, rate %.4g", k, rep.fitted_l2_rate)
    return traj, rep


@dataclass
class ComparisonReport:
    times: list
    ratio_series: list
    gap_series: list
    max_ratio: float
    min_gap: float
    initial_distance: float
    mean_drift: float = 0.0

    def as_dict(self):
        return asdict(self)


def comparison_run(f_low: HeightField, f_high: HeightField, cfg: EvolveConfig):
    """Co-evolve two fields with a shared time step.

    ratio(t) = |f1(t) - f2(t)|_inf / |f1(0) - f2(0)|_inf and
    gap(t) = min(f_high(t) - f_low(t)).
    """
    cfg = replace(cfg, subtract_mean=False)
    a = SimState.initial(prepare_initial(f_low, cfg), cfg)
    b = SimState.initial(prepare_initial(f_high, cfg), cfg)
    ca, cb = RunContext(), RunContext()
    d0 = float(np.abs(a.f.values - b.f.values).max())
    m0 = (a.f.mean, b.f.mean)
    times, ratio, gap = [], [], []
    drift = 0.0
    k = 0
    while True:
        diff = b.f.values - a.f.values
        drift = max(drift, abs(a.f.mean - m0[0]), abs(b.f.mean - m0[1]))
        if k % cfg.output_stride == 0 or a.t >= cfg.t_end * (1 - 1e-12):
            times.append(a.t)
            ratio.append(float(np.abs(diff).max()) / d0 if d0 > 0 else 1.0)
            gap.append(float(diff.min()))
        if a.t >= cfg.t_end * (1 - 1e-12):
            break
        ga = ca.dn(a.f, cfg)
        gb = cb.dn(b.f, cfg)
        dt = min(choose_dt(ga, cfg, cfg.t_end - a.t), choose_dt(gb, cfg))
        a = step(a, cfg, dt=dt, ctx=ca, gf=ga)
        b = step(b, cfg, dt=dt, ctx=cb, gf=gb)
        k += 1
    return ComparisonReport(times, ratio, gap, max(ratio), min(gap), d0, drift)


def modulus_monitor(trajectory, separations):
    """Check that the axis-aligned modulus of continuity never exceeds its initial value.

    A separation d is realised as a shift by round(d n) nodes along each axis.
    """
    out = {}
    f0 = trajectory[0].f
    n = f0.grid.n

    def modulus(v, s):
        return max(float(np.abs(np.roll(v, -s, axis=ax) - v).max()) for ax in (0, 1))

    for d in separations:
        s = int(round(d * n))
        if s < 1 or s > n // 2:
            raise ValueError(f"separation {d} not representable on n = {n}")
        m0 = modulus(f0.values, s)
        series = [modulus(st.f.values, s) for st in trajectory]
        out[float(d)] = {"initial": m0, "max": max(series), "series": series,
                         "ok": bool(max(series) <= m0 + 1e-6)}
    return out


# ---------------------------------------------------------------------------
# output


def write_trajectory(outdir, trajectory, report: DecayReport, cfg: EvolveConfig, extra=None):
    """Snapshot CSVs, ``series.csv`` and ``report.json`` in ``outdir``."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(trajectory):
        write_field_csv(outdir / f"snapshot_{i:04d}.csv", s.f.grid, {"value": s.f.values},
                        {"t": s.t, "label": s.f.label})
    alphas = list(cfg.holder_exponents)
    with open(outdir / "series.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "l2", "linf", "lip"] + [f"holder_{a:g}" for a in alphas]
                    + ["mean", "pairing", "dt"])
        for i, s in enumerate(trajectory):
            wr.writerow([format(x, ".17g") for x in
                         [s.t, s.norms.l2, s.norms.l_inf, s.norms.lip]
                         + [s.norms.holder[a] for a in alphas]
                         + [s.norms.mean, s.pairing, s.dt_last]])
    rep = {"report": report.as_dict(), "config": cfg.echo()}
    rep.update(extra or {})
    with open(outdir / "report.json", "w") as fh:
        json.dump(rep, fh, indent=2, sort_keys=True, default=float)
