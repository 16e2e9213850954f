import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from muskat3d.dn_operator import (PATHS, apply_dn, coercivity_check, dn_flat_oracle,
                                  dn_from_sheet)
from muskat3d.initial_data import random_bandlimited, rescale_to_lip
from muskat3d.layer_ops import LayerOperators
from muskat3d.torus_grid import HeightField, PeriodicGrid, norms, spectral_gradient


def field(n, v):
    return HeightField(PeriodicGrid(n), v)


def harmonic_oracle(f, k):
    """G(f)g for g = u|_surface, u = exp(2 pi |k| z) cos(2 pi k.x), harmonic below the graph."""
    G = f.grid
    x1, x2 = G.nodes
    kk = np.hypot(*k)
    ph = 2 * np.pi * (k[0] * x1 + k[1] * x2)
    e = np.exp(2 * np.pi * kk * f.values)
    g = e * np.cos(ph)
    ux = -2 * np.pi * k[0] * e * np.sin(ph)
    uy = -2 * np.pi * k[1] * e * np.sin(ph)
    uz = 2 * np.pi * kk * g
    f1, f2 = spectral_gradient(f.values)
    return g, -f1 * ux - f2 * uy + uz


def test_flat_oracle_examples():
    G = PeriodicGrid(32)
    x1, x2 = G.nodes
    assert np.abs(dn_flat_oracle(np.full((32, 32), 4.0))).max() < 1e-12
    assert np.abs(dn_flat_oracle(np.sin(2 * np.pi * x2)) - 2 * np.pi * np.sin(2 * np.pi * x2)).max() < 1e-11
    g = np.cos(2 * np.pi * (3 * x1 + 4 * x2))
    assert np.abs(dn_flat_oracle(g) - 10 * np.pi * g).max() < 1e-10


def test_flat_interface_single_mode():
    G = PeriodicGrid(64)
    x1, _ = G.nodes
    g = np.cos(2 * np.pi * x1)
    r = apply_dn(field(64, np.zeros((64, 64))), g)
    ex = 2 * np.pi * g
    assert np.linalg.norm(r.values - ex) / np.linalg.norm(ex) <= 1e-3


def test_flat_oracle_converges_under_refinement():
    errs = []
    for n in (16, 32, 64):
        G = PeriodicGrid(n)
        x1, x2 = G.nodes
        g = np.cos(2 * np.pi * (2 * x1 + x2)) + np.sin(2 * np.pi * 3 * x2)
        r = apply_dn(field(n, np.zeros((n, n))), g)
        ex = dn_flat_oracle(g)
        errs.append(np.linalg.norm(r.values - ex) / np.linalg.norm(ex))
    assert errs[0] > errs[1] > errs[2]
    assert np.log2(errs[1] / errs[2]) >= 1


@pytest.mark.parametrize("k", [(1, 0), (1, 1)])
def test_curved_surface_harmonic_oracle(k):
    n = 32
    f = field(n, random_bandlimited(PeriodicGrid(n), 21, 2, 0.5))
    g, ex = harmonic_oracle(f, k)
    for path in PATHS:
        r = apply_dn(f, g, tol=1e-10, path=path)
        assert np.abs(r.values - ex).max() / np.abs(ex).max() < 1e-4


def test_constant_data_gives_zero():
    f = field(32, random_bandlimited(PeriodicGrid(32), 4, 2, 0.6))
    r = apply_dn(f, np.full((32, 32), 1.7))
    assert np.abs(r.values).max() < 1e-6


@settings(max_examples=4)
@given(st.integers(0, 500))
def test_dn_has_mean_zero(seed):
    G = PeriodicGrid(32)
    f = field(32, random_bandlimited(G, seed, 3, 0.9))
    g = random_bandlimited(G, seed + 1, 3, 2.0) + 0.3
    r = apply_dn(f, g)
    assert r.mean_abs <= 1e-5


def test_paths_agree_and_reject_unknown():
    G = PeriodicGrid(64)
    v = random_bandlimited(G, 6, 3, 0.7)
    f = field(64, v)
    ops = LayerOperators(f)
    d = ops.solve_density(v, tol=1e-10)
    w = ops.sheet_strength(d).w
    a = dn_from_sheet(ops, w, "single_layer_tangential")
    b = dn_from_sheet(ops, w, "cross_product")
    assert np.sqrt(np.mean((a - b) ** 2)) <= 1e-7 * np.sqrt(np.mean(v * v))
    with pytest.raises(ValueError):
        apply_dn(f, v, path="other")


def test_one_dimensional_data_stays_one_dimensional():
    G = PeriodicGrid(32)
    x1, _ = G.nodes
    f = 0.1 * np.sin(2 * np.pi * x1) + 0.04 * np.cos(4 * np.pi * x1)
    g = np.cos(2 * np.pi * x1)
    r = apply_dn(field(32, f), g)
    assert np.abs(r.values - r.values[:, :1]).max() <= 1e-8


def test_coercivity_small_amplitude_limit():
    G = PeriodicGrid(32)
    x1, _ = G.nodes
    a = 1e-4
    rep = coercivity_check(field(32, a * np.sin(2 * np.pi * x1)))
    assert rep.pairing == pytest.approx(a * a * np.pi, rel=1e-4)
    assert rep.h_half_sq == pytest.approx(a * a * np.pi, rel=1e-10)
    assert rep.ratio == pytest.approx(1.0, abs=1e-3)


def test_coercivity_zero_and_mean_checks():
    rep = coercivity_check(field(16, np.zeros((16, 16))))
    assert rep.pairing == 0.0 and rep.ratio is None
    with pytest.raises(ValueError):
        coercivity_check(field(16, np.ones((16, 16))))


@settings(max_examples=5)
@given(st.integers(0, 10_000), st.floats(0.1, 2.0))
def test_pairing_is_positive(seed, lip):
    G = PeriodicGrid(32)
    v = random_bandlimited(G, seed, 3, lip)
    rep = coercivity_check(field(32, v - v.mean()))
    assert rep.pairing >= -1e-6 and rep.ratio > 0


def test_result_serialisation(tmp_path):
    G = PeriodicGrid(16)
    v = random_bandlimited(G, 1, 2, 0.4)
    r = apply_dn(field(16, v), v)
    r.save_csv(tmp_path / "dn.csv")
    text = (tmp_path / "dn.csv.json").read_text()
    assert '"path": "single_layer_tangential"' in text and "timing" in text
    assert set(r.timing) == {"build", "solve", "apply", "total"}
    assert r.pairing == pytest.approx(np.mean(r.values * v))
