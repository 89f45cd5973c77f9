"""Conformally flat charts g = e^{2*phi} * (flat) and their curvature.

With a flat background in dimension 4 the curvature of g = e^{2*phi} delta is
entirely determined by phi:

    Ric_ab = -2 (Hess(phi)_ab - d_a phi d_b phi) - (Lap phi + 2 |grad phi|^2) delta_ab
    Sc     = e^{-2 phi} (-6 Lap phi - 6 |grad phi|^2)

(Hess, Lap, grad flat).  The metric Laplacian on functions is

    Lap_g f = e^{-2 phi} (Lap f + 2 grad phi . grad f)

and the volume element is dv_g = e^{4 phi} dx, so curved integrals reduce to
flat ones against the cached ``volume_weight``.  Charts are immutable: the
curvature fields are computed once at construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from paneitzlab.grid import AXES, Grid4, gradient_flat, hessian_flat, integrate_flat, laplacian_flat


@dataclass(frozen=True)
class ConformalChart:
    """A conformal factor on a grid plus the derived curvature fields."""

    grid: Grid4
    phi: np.ndarray
    scalar_curvature: np.ndarray
    ricci: np.ndarray
    volume_weight: np.ndarray

    @property
    def is_flat(self):
        """True when phi is constant, so all curvature vanishes identically."""
        return bool(np.all(self.phi == self.phi.flat[0]))


def curvature_from_phi(grid, phi):
    """Build the chart for g = e^{2*phi} * (flat), caching Sc, Ric and e^{4*phi}.

    Curvature values on the boundary layer rely on one-sided stencils (the
    Laplacian there is masked to zero) and should only be consumed at
    boundary_depth >= 1.
    """
    phi = grid.check_scalar(phi)
    if not np.all(np.isfinite(phi)):
        raise ValueError("conformal factor phi contains non-finite values")
    gphi = gradient_flat(grid, phi)
    grad2 = np.einsum("...a,...a->...", gphi, gphi)
    lap = laplacian_flat(grid, phi)
    hess = hessian_flat(grid, phi)
    ricci = -2.0 * (hess - gphi[..., :, None] * gphi[..., None, :])
    trace_part = lap + 2.0 * grad2
    for a in AXES:
        ricci[..., a, a] -= trace_part
    sc = np.exp(-2.0 * phi) * (-6.0 * lap - 6.0 * grad2)
    return ConformalChart(
        grid=grid,
        phi=phi,
        scalar_curvature=sc,
        ricci=ricci,
        volume_weight=np.exp(4.0 * phi),
    )


def flat_chart(grid, level=0.0):
    """Chart for a constant conformal factor (flat metric up to scale)."""
    return curvature_from_phi(grid, np.full(grid.dims, float(level)))


def laplace_beltrami(f, chart):
    """Metric Laplacian e^{-2 phi}(Lap f + 2 grad phi . grad f), per component.

    Matches ``laplacian_flat`` bit-exactly on flat charts.  Masked (zero) on
    the boundary layer like the flat Laplacian.
    """
    grid = chart.grid
    f = grid.check_field(f)
    lap = laplacian_flat(grid, f)
    if chart.is_flat and chart.phi.flat[0] == 0.0:
        return lap
    gphi = gradient_flat(grid, chart.phi)
    gf = gradient_flat(grid, f)
    cross = np.einsum("...a,...a->...", gf, gphi) if f.ndim == 4 else np.einsum("...ia,...a->...i", gf, gphi)
    out = np.exp(-2.0 * chart.phi)[..., None] if f.ndim == 5 else np.exp(-2.0 * chart.phi)
    return out * (lap + 2.0 * cross)


def integrate_g(f, chart, region=None):
    """Integral of a scalar field against dv_g = e^{4 phi} dx over ``region``."""
    return integrate_flat(chart.grid, f * chart.volume_weight, region)


def ricci_norm2(chart):
    """|Ric|_g^2 = e^{-4 phi} sum_ab Ric_ab^2 (indices raised by g)."""
    sq = np.einsum("...ab,...ab->...", chart.ricci, chart.ricci)
    return np.exp(-4.0 * chart.phi) * sq


def total_q_curvature(chart, region=None):
    """Aggregate curvature (1/12) int (Sc^2 - 3 |Ric|^2) dv_g over ``region``.

    Defaults to the boundary_depth >= 2 region where all curvature stencils
    are centered.  Invariant (to O(h^2)) under conformal perturbations of phi
    supported strictly inside the region.
    """
    if region is None:
        region = chart.grid.depth_region(2)
    integrand = (chart.scalar_curvature**2 - 3.0 * ricci_norm2(chart)) / 12.0
    return integrate_g(integrand, chart, region)


def contracted_bianchi_defect(chart):
    """Max-norm defect of div_g Ric = (1/2) grad_g Sc at boundary_depth >= 2.

    Both sides are assembled independently from the cached fields, so this is
    an O(h^2) consistency check of the curvature formulas.
    """
    lhs = ricci_divergence(chart)
    grid = chart.grid
    rhs = 0.5 * np.exp(-2.0 * chart.phi)[..., None] * gradient_flat(grid, chart.scalar_curvature)
    mask = grid.depth_region(2)
    return float(np.max(np.abs(lhs - rhs)[mask]))


def ricci_divergence(chart):
    """div_g of the index-raised Ricci tensor, shape ``dims + (4,)``.

    In flat coordinates with g = e^{2 phi} delta:
    div(Ric)^a = e^{-4 phi} (sum_b d_b R_ab - d_a phi tr R + 2 sum_b R_ab d_b phi).
    """
    grid = chart.grid
    gphi = gradient_flat(grid, chart.phi)
    ric = chart.ricci
    div_flat = np.zeros(grid.dims + (4,), dtype=np.float64)
    for a in AXES:
        grad_col = gradient_flat(grid, ric[..., a, :])
        div_flat[..., a] = np.einsum("...bb->...", grad_col)
    trace = np.einsum("...aa->...", ric)
    out = div_flat - gphi * trace[..., None] + 2.0 * np.einsum("...ab,...b->...a", ric, gphi)
    return np.exp(-4.0 * chart.phi)[..., None] * out


def conformal_tension_identity_check(u, chart, phi_pert):
    """Compare the sphere-map tension on chart(phi + phi_pert) against the
    conformal-change prediction from chart(phi).

    For g1 = e^{2 psi} g0 the tension fields of a map obey
    tau_{g1} = e^{-2 psi}(tau_{g0} + 2 <grad psi, du>_{g0}); both sides are
    discretized independently and the report carries the max nodal deviation
    over boundary_depth >= 2.
    """
    from paneitzlab.spheremap import tension

    grid = chart.grid
    phi_pert = grid.check_scalar(phi_pert)
    chart2 = curvature_from_phi(grid, chart.phi + phi_pert)
    lhs = tension(u, chart2)
    gpsi = gradient_flat(grid, phi_pert)
    gu = gradient_flat(grid, u.values)
    cross = np.einsum("...ia,...a->...i", gu, gpsi) * np.exp(-2.0 * chart.phi)[..., None]
    rhs = np.exp(-2.0 * phi_pert)[..., None] * (tension(u, chart) + 2.0 * cross)
    mask = grid.depth_region(2)
    deviation = float(np.max(np.linalg.norm((lhs - rhs)[mask], axis=-1))) if mask.any() else 0.0
    return {
        "max_deviation": deviation,
        "lhs_scale": float(np.max(np.linalg.norm(lhs[mask], axis=-1))) if mask.any() else 0.0,
    }


# -- conformal factor presets ---------------------------------------------


def phi_flat(grid, level=0.0):
    return np.full(grid.dims, float(level))


def phi_stereographic(grid, center=(0.0, 0.0, 0.0, 0.0), scale=1.0):
    """Round-sphere factor phi = ln(2s / (s^2 + |x - c|^2)); Sc = 12, Ric = 3g."""
    x = grid.coords - np.asarray(center, dtype=np.float64)
    r2 = np.einsum("...a,...a->...", x, x)
    s = float(scale)
    return np.log(2.0 * s / (s * s + r2))


def smooth_bump(grid, margin=0.25):
    """C-infinity window, = exp(1 - 1/(1 - t^2)) per axis, vanishing within
    ``margin`` (as a fraction of the box width) of every face.  Identically
    1 nowhere but equal to exp(0)=1 at the center; zero on and outside the
    margin shell, so compactly supported at boundary_depth >= 2 whenever
    2h < margin * width.
    """
    if grid.periodic:
        raise ValueError("smooth_bump expects a boundary; use periodic presets instead")
    out = np.ones(grid.dims, dtype=np.float64)
    for a in AXES:
        x = grid.axis_coords[a]
        lo, hi = x[0], x[-1]
        width = hi - lo
        s = (x - lo) / width
        t = (s - 0.5) / (0.5 - margin)
        vals = np.zeros_like(x)
        inside = np.abs(t) < 1.0
        vals[inside] = np.exp(1.0 - 1.0 / (1.0 - t[inside] ** 2))
        shape = [1, 1, 1, 1]
        shape[a] = len(x)
        out = out * vals.reshape(shape)
    return out


def phi_bump(grid, amplitude=0.1, margin=0.25):
    """Compactly supported conformal perturbation for invariance experiments."""
    return float(amplitude) * smooth_bump(grid, margin=margin)
