import json
import math

import mpmath
import numpy as np
import pytest

from muskat3d.evolution import (EvolutionAborted, EvolveConfig, RunContext, SimState, choose_dt,
                                comparison_run, fit_rate, modulus_monitor, run, step,
                                write_trajectory)
from muskat3d.initial_data import random_bandlimited
from muskat3d.torus_grid import HeightField, PeriodicGrid


def field(n, v):
    return HeightField(PeriodicGrid(n), v)


def test_config_validation():
    for kw in ({"kappa": 0}, {"epsilon": -1}, {"t_end": 0}, {"cfl_safety": 1.5},
               {"output_stride": 0}, {"scheme": "rk4"}, {"n": 12}):
        with pytest.raises(ValueError):
            EvolveConfig(**kw)
    assert EvolveConfig(epsilon=0.0).experimental
    assert EvolveConfig().echo()["holder_exponents"] == [0.5]


def test_constant_is_steady():
    cfg = EvolveConfig(n=16, t_end=0.05, subtract_mean=False)
    traj, rep = run(field(16, np.full((16, 16), 0.7)), cfg)
    assert all(np.all(s.f.values == 0.7) for s in traj)
    assert rep.mean_drift == 0.0


def test_zero_data_has_undefined_rate():
    cfg = EvolveConfig(n=16, t_end=0.04)
    traj, rep = run(field(16, np.zeros((16, 16))), cfg)
    assert all(not s.f.values.any() for s in traj)
    assert math.isnan(rep.fitted_l2_rate) and math.isnan(rep.c_fit)


def test_linearised_single_mode_step():
    n = 32
    G = PeriodicGrid(n)
    x1, _ = G.nodes
    a, dt = 1e-3, 1e-3
    cfg = EvolveConfig(n=n, epsilon=0.0)
    s = step(SimState.initial(field(n, a * np.sin(2 * np.pi * x1)), cfg), cfg, dt=dt)
    mpmath.mp.dps = 30
    ref = float(a * mpmath.exp(-2 * mpmath.pi * dt))
    amp = 2 * np.mean(s.f.values * np.sin(2 * np.pi * x1))
    assert amp == pytest.approx(ref, rel=1e-3)
    assert s.t == dt and s.dt_last == dt


def test_time_step_controller():
    cfg = EvolveConfig(n=32, dt_max=0.02, cfl_safety=0.5)
    assert choose_dt(np.zeros((32, 32)), cfg) == pytest.approx(0.5 / 32)
    assert choose_dt(np.full((32, 32), 4.0), cfg) == pytest.approx(0.5 / 32 / 4)
    assert choose_dt(np.zeros((32, 32)), cfg, remaining=1e-3) == 1e-3


@pytest.fixture(scope="module")
def short_run():
    cfg = EvolveConfig(n=16, t_end=0.1, output_stride=2)
    f0 = field(16, random_bandlimited(PeriodicGrid(16), 2, 2, 1.0) + 0.3)
    return cfg, run(f0, cfg)


def test_run_invariants(short_run):
    cfg, (traj, rep) = short_run
    assert traj[0].t == 0 and traj[-1].t == pytest.approx(cfg.t_end)
    assert abs(traj[0].f.mean) < 1e-15                        # mean subtracted
    assert rep.mean_drift <= 1e-10
    assert rep.monotone_linf and rep.monotone_lip and rep.monotone_l2
    assert rep.fitted_l2_rate > 0
    assert len(rep.times) == len(rep.l2_series) == len(rep.lip_series) == len(rep.holder_series[0.5])
    assert all(np.diff(rep.times) > 0)


def test_trajectory_output(short_run, tmp_path):
    cfg, (traj, rep) = short_run
    write_trajectory(tmp_path, traj, rep, cfg)
    lines = (tmp_path / "series.csv").read_text().splitlines()
    assert lines[0] == "t,l2,linf,lip,holder_0.5,mean,pairing,dt"
    assert len(lines) == len(traj) + 1
    rep_json = json.loads((tmp_path / "report.json").read_text())
    assert rep_json["config"]["n"] == 16
    assert (tmp_path / f"snapshot_{len(traj) - 1:04d}.csv").exists()


def test_two_dimensional_reduction():
    n = 16
    x1, _ = PeriodicGrid(n).nodes
    f0 = field(n, 0.1 * np.sin(2 * np.pi * x1) + 0.05 * np.cos(4 * np.pi * x1))
    traj, _ = run(f0, EvolveConfig(n=n, t_end=0.05))
    worst = max(np.abs(s.f.values - s.f.values[:, :1]).max() for s in traj)
    assert worst <= 1e-8


def test_time_step_halving():
    n = 16
    f0 = field(n, random_bandlimited(PeriodicGrid(n), 3, 2, 0.5))
    a, _ = run(f0, EvolveConfig(n=n, t_end=0.1, dt_max=0.004))
    b, _ = run(f0, EvolveConfig(n=n, t_end=0.1, dt_max=0.002))
    fa, fb = a[-1].f.values, b[-1].f.values
    assert np.linalg.norm(fa - fb) / np.linalg.norm(fb) <= 1e-2
    # first order in time: the difference is ~ dt, so it is small next to the change over the run
    assert np.linalg.norm(fa - fb) <= 0.02 * np.linalg.norm(f0.values - fb)


def test_heun_scheme_is_closer_to_a_fine_reference():
    n = 16
    f0 = field(n, random_bandlimited(PeriodicGrid(n), 3, 2, 0.5))
    ref, _ = run(f0, EvolveConfig(n=n, t_end=0.06, dt_max=0.0025))
    e, _ = run(f0, EvolveConfig(n=n, t_end=0.06, dt_max=0.01))
    h, _ = run(f0, EvolveConfig(n=n, t_end=0.06, dt_max=0.01, scheme="heun"))
    err_e = np.linalg.norm(e[-1].f.values - ref[-1].f.values)
    err_h = np.linalg.norm(h[-1].f.values - ref[-1].f.values)
    assert err_h < err_e


def test_comparison_translation_and_identity():
    n = 16
    v = random_bandlimited(PeriodicGrid(n), 4, 2, 0.8)
    cfg = EvolveConfig(n=n, t_end=0.05)
    rep = comparison_run(field(n, v), field(n, v + 0.1), cfg)
    assert np.allclose(rep.ratio_series, 1.0, atol=1e-12)
    assert rep.min_gap == pytest.approx(0.1, abs=1e-12)
    same = comparison_run(field(n, v), field(n, v), cfg)
    assert same.max_ratio == 1.0 and abs(same.min_gap) <= 1e-12


def test_comparison_of_ordered_pair():
    n = 16
    G = PeriodicGrid(n)
    x1, _ = G.nodes
    lo = random_bandlimited(G, 5, 2, 0.8)
    hi = lo + 0.05 * (1 + np.cos(2 * np.pi * x1))
    rep = comparison_run(field(n, lo), field(n, hi), EvolveConfig(n=n, t_end=0.1))
    assert rep.max_ratio <= 1 + 1e-3 and rep.min_gap >= -1e-6 and rep.mean_drift <= 1e-10


def test_modulus_monitor(short_run):
    _, (traj, _) = short_run
    out = modulus_monitor(traj, [1 / 16, 0.5])
    assert all(v["ok"] for v in out.values())
    const = [SimState.initial(field(16, np.full((16, 16), 2.0)), EvolveConfig(n=16))]
    assert modulus_monitor(const, [0.25])[0.25]["max"] == 0.0
    with pytest.raises(ValueError):
        modulus_monitor(traj, [0.01])


def test_fit_rate_recovers_exponential():
    t = np.linspace(0, 1, 11)
    assert fit_rate(t, 3 * np.exp(-2.5 * t), 0.5) == pytest.approx(2.5)
    assert math.isnan(fit_rate([0.0], [1.0], 0.0))


def test_non_finite_state_aborts():
    n = 16
    cfg = EvolveConfig(n=n)
    s = SimState.initial(field(n, random_bandlimited(PeriodicGrid(n), 1, 2, 0.5)), cfg)
    with pytest.raises(EvolutionAborted):
        step(s, cfg, gf=np.full((n, n), np.nan))


def test_run_context_reuses_table_and_warm_start():
    n = 16
    cfg = EvolveConfig(n=n)
    f = field(n, random_bandlimited(PeriodicGrid(n), 1, 2, 0.5))
    ctx = RunContext()
    a = ctx.dn(f, cfg)
    table = ctx.table
    b = ctx.dn(f, cfg)
    assert ctx.table is table and ctx.dn_iterations[1] <= 1
    assert np.abs(a - b).max() < 1e-7
