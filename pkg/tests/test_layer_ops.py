import numpy as np
import pytest
from hypothesis import given, strategies as st

from muskat3d.initial_data import fourier_sum, random_bandlimited
from muskat3d.layer_ops import (GridMismatchError, LayerOperators, SolverDivergenceError,
                                apply_double_layer, apply_single_layer_tangential, build_w,
                                clear_cache, operators, solve_density)
from muskat3d.torus_grid import HeightField, PeriodicGrid, spectral_gradient


def field(n, v):
    return HeightField(PeriodicGrid(n), v)


@pytest.fixture(scope="module")
def curved32():
    G = PeriodicGrid(32)
    v = random_bandlimited(G, 3, 3, 0.8)
    return LayerOperators(field(32, v)), v


def test_gauss_identity(curved32):
    ops, _ = curved32
    assert np.abs(ops.double_layer(np.ones((32, 32)))).max() < 1e-6


def test_gauss_identity_tightens_under_refinement():
    errs = []
    for n in (16, 32):
        G = PeriodicGrid(n)
        ops = LayerOperators(field(n, random_bandlimited(G, 5, 2, 1.0)))
        errs.append(np.abs(ops.double_layer(np.ones((n, n)))).max())
    assert errs[1] < errs[0]


def test_flat_double_layer_vanishes(rng):
    f = field(16, np.full((16, 16), -0.2))
    phi = rng.normal(size=(16, 16))
    assert np.abs(apply_double_layer(f, phi)).max() < 1e-15


def test_double_layer_mean_for_sine_height():
    # the value 0 was confirmed by refinement at n = 16, 32, 64
    G = PeriodicGrid(32)
    x1, x2 = G.nodes
    ops = LayerOperators(field(32, 0.1 * np.sin(2 * np.pi * x1)))
    assert abs(ops.double_layer(np.cos(2 * np.pi * x2)).mean()) < 1e-6


def test_flat_single_layer_tangential():
    G = PeriodicGrid(32)
    x1, _ = G.nodes
    d1, d2 = apply_single_layer_tangential(field(32, np.zeros((32, 32))), np.cos(2 * np.pi * x1))
    # S0 has symbol 1/(4 pi |k|); d1 of cos(2 pi x1)/(4 pi) is -sin(2 pi x1)/2
    assert np.abs(d1 + 0.5 * np.sin(2 * np.pi * x1)).max() < 1e-9
    assert np.abs(d2).max() < 1e-9
    z1, z2 = apply_single_layer_tangential(field(32, np.zeros((32, 32))), np.zeros((32, 32)))
    assert not z1.any() and not z2.any()


def test_single_layer_tangential_reflection():
    G = PeriodicGrid(32)
    x1, x2 = G.nodes
    f = 0.1 * np.cos(2 * np.pi * x1) + 0.05 * np.cos(2 * np.pi * (x1 + x2)) + 0.05 * np.cos(2 * np.pi * (x1 - x2))
    phi = np.cos(4 * np.pi * x1) + np.sin(2 * np.pi * x2)
    d1, _ = apply_single_layer_tangential(field(32, f), phi)
    ref = np.roll(d1[::-1], 1, axis=0)            # x1 -> 1 - x1 on the grid
    assert np.abs(d1 + ref).max() < 1e-10


def test_flat_solve_is_exact(rng):
    g = rng.normal(size=(16, 16))
    d = solve_density(field(16, np.full((16, 16), 0.4)), g)
    assert np.array_equal(d.theta, 2 * g)
    z = solve_density(field(16, np.full((16, 16), 0.4)), np.zeros((16, 16)))
    assert z.iterations == 0 and not z.theta.any()


def test_solve_is_a_left_inverse(curved32):
    ops, v = curved32
    d = ops.solve_density(v, tol=1e-10)
    res = np.linalg.norm(0.5 * d.theta + ops.double_layer(d.theta) - v) / np.linalg.norm(v)
    assert res <= 1e-10 and d.residual_norm == pytest.approx(res, rel=1e-6)


def test_solve_validates_tolerance(curved32):
    ops, v = curved32
    for tol in (1e-13, 1e-2):
        with pytest.raises(ValueError):
            ops.solve_density(v, tol=tol)


def test_divergence_is_reported(curved32):
    ops, v = curved32
    with pytest.raises(SolverDivergenceError) as exc:
        ops.solve_density(v, tol=1e-12, maxiter=1, restart=2)
    assert exc.value.residual > 1e-12


def test_symmetric_height_reference():
    n = 64
    G = PeriodicGrid(n)
    x1, x2 = G.nodes
    f = 0.1 * np.sin(2 * np.pi * x1) * np.sin(2 * np.pi * x2)
    d = LayerOperators(field(n, f)).solve_density(f, tol=1e-8)
    assert d.iterations <= 40
    th = d.theta
    assert np.abs(th - th.T).max() < 1e-10                      # swap x1 <-> x2
    refl = np.roll(np.roll(th[::-1, ::-1], 1, 0), 1, 1)        # x -> -x
    assert np.abs(th - refl).max() < 1e-10
    half = np.roll(th, (n // 2, n // 2), (0, 1))                # x -> x + (1/2, 1/2)
    assert np.abs(th - half).max() < 1e-10


def test_translation_equivariance():
    n = 16
    G = PeriodicGrid(n)
    f = random_bandlimited(G, 8, 2, 0.7)
    g = np.cos(2 * np.pi * G.nodes[1])
    a = LayerOperators(field(n, f)).solve_density(g, tol=1e-11).theta
    s = (3, 5)
    b = LayerOperators(field(n, np.roll(f, s, (0, 1)))).solve_density(np.roll(g, s, (0, 1)), tol=1e-11).theta
    assert np.abs(np.roll(a, s, (0, 1)) - b).max() < 1e-9


def test_build_w_examples():
    G = PeriodicGrid(16)
    x1, x2 = G.nodes
    flat = field(16, np.zeros((16, 16)))
    assert not build_w(flat, np.full((16, 16), 3.0)).w.any()
    w = build_w(flat, np.sin(2 * np.pi * x2)).w
    assert np.abs(w[0] - 2 * np.pi * np.cos(2 * np.pi * x2)).max() < 1e-12
    assert np.abs(w[1:]).max() < 1e-15


@given(st.integers(0, 1000), st.integers(0, 1000))
def test_sheet_is_tangent(seed_f, seed_t):
    G = PeriodicGrid(16)
    f = random_bandlimited(G, seed_f, 3, 1.5)
    th = random_bandlimited(G, seed_t, 4, 3.0)
    w = build_w(field(16, f), th).w
    f1, f2 = spectral_gradient(f)
    normal = np.stack([-f1, -f2, np.ones_like(f1)])
    assert np.abs(np.sum(w * normal, axis=0)).max() < 1e-10


def test_relations_hold(curved32):
    ops, v = curved32
    d = ops.solve_density(v, tol=1e-10)
    r1, r2 = ops.relation_residuals(d, v)
    assert max(np.abs(r1).max(), np.abs(r2).max()) < 1e-5


def test_grid_mismatch():
    f = field(16, np.zeros((16, 16)))
    with pytest.raises(GridMismatchError):
        apply_double_layer(f, np.zeros((8, 8)))


def test_operator_cache_reuses_builds():
    clear_cache()
    f = field(16, random_bandlimited(PeriodicGrid(16), 1, 2, 0.3))
    a = operators(f)
    assert operators(HeightField(f.grid, np.array(f.values))) is a
    g = field(16, random_bandlimited(PeriodicGrid(16), 2, 2, 0.3))
    assert operators(g).table is a.table
    clear_cache()
