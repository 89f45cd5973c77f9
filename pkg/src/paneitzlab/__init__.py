"""Numerical laboratory for conformally invariant fourth-order energies of sphere-valued maps."""

from paneitzlab.grid import Grid4, gradient_flat, hessian_flat, integrate_flat, laplacian_flat
from paneitzlab.conformal import (
    ConformalChart,
    curvature_from_phi,
    integrate_g,
    laplace_beltrami,
    total_q_curvature,
)
from paneitzlab.spheremap import SphereMap, project_to_sphere, tension, tension_flat
from paneitzlab.energy import EnergyBreakdown, bienergy, discrete_gradient, el_residual, paneitz_energy

__version__ = "0.1.0"

__all__ = [
    "Grid4",
    "gradient_flat",
    "laplacian_flat",
    "hessian_flat",
    "integrate_flat",
    "ConformalChart",
    "curvature_from_phi",
    "laplace_beltrami",
    "integrate_g",
    "total_q_curvature",
    "SphereMap",
    "project_to_sphere",
    "tension",
    "tension_flat",
    "EnergyBreakdown",
    "paneitz_energy",
    "bienergy",
    "discrete_gradient",
    "el_residual",
]
