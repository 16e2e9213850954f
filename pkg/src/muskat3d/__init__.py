"""Boundary-integral solver for the one-phase Muskat problem on T^2 x R.

Set ``MUSKAT3D_THREADS`` before the first import to fix the worker count.
"""
import os as _os

if _os.environ.get("MUSKAT3D_THREADS"):
    _os.environ["NUMBA_NUM_THREADS"] = _os.environ["MUSKAT3D_THREADS"]

from .torus_grid import HeightField, NormReport, PeriodicGrid, norms  # noqa: E402
from .green_kernel import GreenKernel, KernelConfig, gamma, grad_gamma  # noqa: E402
from ._quadrature import QuadratureConfig  # noqa: E402
from .layer_ops import (BoundaryDensity, LayerOperators, SheetStrength,  # noqa: E402
                        apply_double_layer, apply_single_layer_tangential, build_w,
                        solve_density)
from .dn_operator import DnResult, apply_dn, coercivity_check, dn_flat_oracle  # noqa: E402
from .evolution import EvolveConfig, SimState, comparison_run, run, step  # noqa: E402
from .sphere_dn import SphereBoundaryFunction, sphere_dn_at_point, sphere_dn_at_pole  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "PeriodicGrid", "HeightField", "NormReport", "norms",
    "GreenKernel", "KernelConfig", "gamma", "grad_gamma", "QuadratureConfig",
    "LayerOperators", "BoundaryDensity", "SheetStrength", "apply_double_layer",
    "apply_single_layer_tangential", "build_w", "solve_density",
    "DnResult", "apply_dn", "coercivity_check", "dn_flat_oracle",
    "EvolveConfig", "SimState", "step", "run", "comparison_run",
    "SphereBoundaryFunction", "sphere_dn_at_pole", "sphere_dn_at_point",
]
