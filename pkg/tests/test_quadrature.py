import numpy as np
import pytest

from muskat3d._quadrature import (GridKernels, OffsetTable, QuadratureConfig, _lagrange_weights,
                                  shifted_samples)
from muskat3d.green_kernel import GreenKernel
from muskat3d.initial_data import random_bandlimited
from muskat3d.torus_grid import PeriodicGrid

K = GreenKernel()


def test_config_validation():
    with pytest.raises(ValueError):
        QuadratureConfig(angular_nodes=41)
    with pytest.raises(ValueError):
        QuadratureConfig(interp_order=7)
    assert QuadratureConfig().sigma(64) == pytest.approx(2.5 / 64)
    assert QuadratureConfig().sigma(8) < 0.49 / 5.9 + 1e-15


def test_lagrange_weights_reproduce_polynomials():
    nodes = np.arange(6) - 2.0
    for frac in (0.3, 0.77):
        w = _lagrange_weights(frac, 6)
        for deg in range(6):
            assert w @ nodes**deg == pytest.approx(frac**deg, abs=1e-12)


def test_shifted_samples_are_exact_for_band_limited_fields():
    G = PeriodicGrid(16)
    x1, x2 = G.nodes
    f = lambda a, b: np.sin(2 * np.pi * (a + 2 * b)) + 0.3 * np.cos(2 * np.pi * 3 * b)
    d1 = np.array([0.013, -0.02])
    d2 = np.array([0.004, 0.031])
    out = shifted_samples(f(x1, x2), d1, d2)
    for m in range(2):
        ref = f(x1 - d1[m], x2 - d2[m]).ravel()
        assert np.abs(out[:, m] - ref).max() < 1e-13


def test_offset_table_matches_direct_kernel():
    n = 16
    tab = OffsetTable(n, 0.4, K)
    sigma = QuadratureConfig().sigma(n)
    for p, q, dz in ((3, 5, 0.1), (8, 1, -0.3), (0, 4, 0.0), (15, 15, 0.25)):
        v, g = tab.evaluate(p, q, dz)
        d1 = ((p + n // 2) % n - n // 2) / n
        d2 = ((q + n // 2) % n - n // 2) / n
        ref = K.evaluate_many([d1], [d2], [dz])[0]
        r = np.sqrt(d1 * d1 + d2 * d2 + dz * dz)
        free = -1.0 / (4 * np.pi * r)
        assert v == pytest.approx(ref[0] - free, abs=1e-12)


def test_flat_convolution_equals_dense_assembly():
    n = 16
    f = np.full((n, n), 0.3)
    phi = np.random.default_rng(0).normal(size=(n, n))
    a = GridKernels(f, K)
    b = GridKernels(f, K, mode="dense")
    assert a.mode == "convolution" and b.mode == "dense"
    for k in range(4):
        assert np.abs(a.apply(k, phi) - b.apply(k, phi)).max() < 1e-13


def test_dense_and_matrix_free_agree():
    G = PeriodicGrid(16)
    f = random_bandlimited(G, 1, 2, 0.8)
    phi = np.random.default_rng(1).normal(size=(16, 16))
    a = GridKernels(f, K, mode="dense")
    b = GridKernels(f, K, mode="free", table=a.table)
    for k in range(4):
        assert np.abs(a.apply(k, phi) - b.apply(k, phi)).max() < 1e-12


def test_stacked_densities():
    G = PeriodicGrid(16)
    f = random_bandlimited(G, 2, 2, 0.5)
    gk = GridKernels(f, K)
    rng = np.random.default_rng(2)
    phis = rng.normal(size=(16, 16, 3))
    out = gk.apply(1, phis)
    for r in range(3):
        assert np.abs(out[..., r] - gk.apply(1, phis[..., r])).max() < 1e-13


def test_bad_modes():
    with pytest.raises(ValueError):
        GridKernels(np.zeros((8, 8)) + np.eye(8), K, mode="convolution")
    with pytest.raises(ValueError):
        GridKernels(np.zeros((8, 8)), K, mode="fast")
    gk = GridKernels(np.zeros((8, 8)), K, value_only=True)
    with pytest.raises(ValueError):
        gk.apply(1, np.zeros((8, 8)))
