"""Sphere-valued maps and the extrinsic target algebra.

A map u into the unit n-sphere is stored as one ambient (n+1)-vector per
node with |u| = 1.  The target geometry enters only through the pointwise
projectors P_perp(v) = (u.v) u and P = Id - P_perp; the second fundamental
form contracted on the gradient is A(grad u, grad u) = u |grad u|^2.
The tension field is realized as the tangential projection of the metric
Laplacian, which makes tau(u) . u = 0 exact by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from paneitzlab.conformal import smooth_bump
from paneitzlab.grid import DegenerateProjectionError, Grid4, gradient_flat, laplacian_flat

UNIT_NORM_TOL = 1e-12


@dataclass(frozen=True)
class SphereMap:
    """Ambient-vector representation of u: grid -> S^n."""

    grid: Grid4
    values: np.ndarray  # shape dims + (n+1,)

    def __post_init__(self):
        vals = self.grid.check_vector(self.values)
        object.__setattr__(self, "values", vals)
        norms = np.linalg.norm(vals, axis=-1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > UNIT_NORM_TOL:
            raise ValueError(f"sphere map violates |u| = 1 by {worst:.3e} (tol {UNIT_NORM_TOL})")

    @property
    def target_dim(self):
        return self.values.shape[-1] - 1

    @property
    def ambient_dim(self):
        return self.values.shape[-1]

    def copy(self):
        return SphereMap(self.grid, self.values.copy())


def project_to_sphere(grid, raw):
    """Nearest-point projection u = raw / |raw|, nodewise.

    Raises DegenerateProjectionError naming the first offending node if any
    |raw| < 1e-8.
    """
    raw = grid.check_vector(raw)
    norms = np.linalg.norm(raw, axis=-1)
    if np.min(norms) < 1e-8:
        node = np.unravel_index(int(np.argmin(norms)), grid.dims)
        raise DegenerateProjectionError(
            f"cannot project near-zero vector (|v| = {norms[node]:.3e}) at node {node}"
        )
    return SphereMap(grid, raw / norms[..., None])


def tangent_project(u_point, v):
    """P(v) = v - (u.v) u for a unit vector u; broadcast over leading axes."""
    u_point = np.asarray(u_point, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = np.einsum("...i,...i->...", u_point, v)
    return v - s[..., None] * u_point


def normal_project(u_point, v):
    """P_perp(v) = (u.v) u."""
    u_point = np.asarray(u_point, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    s = np.einsum("...i,...i->...", u_point, v)
    return s[..., None] * u_point


def second_fundamental_energy_density(u):
    """|grad u|^2 per node, so that A(grad u, grad u) = u * (this scalar)."""
    gu = gradient_flat(u.grid, u.values)
    return np.einsum("...ia,...ia->...", gu, gu)


def tension(u, chart):
    """Metric tension field tau(u) = Lap_g u - (u . Lap_g u) u.

    Tangential exactly by construction; masked (zero) on the boundary layer
    along with the Laplacian.
    """
    from paneitzlab.conformal import laplace_beltrami

    lap = laplace_beltrami(u.values, chart)
    return tangent_project(u.values, lap)


def tension_flat(u):
    """Flat-connection tension field, tangential projection of the flat Laplacian."""
    lap = laplacian_flat(u.grid, u.values)
    return tangent_project(u.values, lap)


def pointwise_cs_bound(u):
    """Verify (u . Lap u)^2 <= |Lap u|^2 at every node, with zero tolerance.

    The slack is evaluated in the Lagrange sum-of-squares form
    |u|^2 |v|^2 - (u.v)^2 = sum_{i<j} (u_i v_j - u_j v_i)^2, whose floating
    point value is nonnegative termwise, so the discrete Cauchy-Schwarz
    inequality is certified without tolerance (|u| = 1 to 1e-12).  Also
    reports the max slack of the O(h^2) identity u . Lap u + |grad u|^2 = 0.
    """
    vals = u.values
    lap = laplacian_flat(u.grid, vals)
    d = vals.shape[-1]
    slack = np.zeros(u.grid.dims, dtype=np.float64)
    for i in range(d):
        for j in range(i + 1, d):
            slack += (vals[..., i] * lap[..., j] - vals[..., j] * lap[..., i]) ** 2
    s = np.einsum("...i,...i->...", vals, lap)
    q = np.einsum("...i,...i->...", lap, lap)
    direct = q - s * s
    mask = u.grid.depth_region(1)
    grad2 = second_fundamental_energy_density(u)
    ident = np.abs(s + grad2)[mask]
    return {
        "cs_holds": bool(np.all(slack >= 0.0)),
        "min_lagrange_slack": float(np.min(slack)),
        "min_direct_slack": float(np.min(direct[mask])) if mask.any() else 0.0,
        "max_identity_slack": float(np.max(ident)) if ident.size else 0.0,
    }


def cs_slack_exact(u, lap=None, max_nodes=None):
    """Exact rational evaluation of |u|^2|Lap u|^2 - (u . Lap u)^2 (min over nodes).

    Fraction arithmetic over the float64 node values; used by tests that want
    the Cauchy-Schwarz slack certified without any floating-point rounding.
    """
    vals = u.values
    if lap is None:
        lap = laplacian_flat(u.grid, vals)
    flat_u = vals.reshape(-1, vals.shape[-1])
    flat_v = lap.reshape(-1, lap.shape[-1])
    if max_nodes is not None and flat_u.shape[0] > max_nodes:
        idx = np.linspace(0, flat_u.shape[0] - 1, max_nodes).astype(int)
        flat_u, flat_v = flat_u[idx], flat_v[idx]
    worst = None
    for uu, vv in zip(flat_u, flat_v):
        fu = [Fraction(x) for x in uu]
        fv = [Fraction(x) for x in vv]
        nu = sum(x * x for x in fu)
        nv = sum(x * x for x in fv)
        dot = sum(a * b for a, b in zip(fu, fv))
        slack = nu * nv - dot * dot
        if worst is None or slack < worst:
            worst = slack
    return worst


# -- counter-based randomness ------------------------------------------------


def counter_rng(seed, *counters):
    """Philox generator keyed by (seed, counters): order-independent seeding."""
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=list(counters) + [0] * (4 - len(counters))))


# -- map presets --------------------------------------------------------------


def constant_map(grid, direction=(1.0, 0.0, 0.0), target_dim=None):
    vec = np.asarray(direction, dtype=np.float64)
    if target_dim is not None and vec.shape[0] != target_dim + 1:
        raise ValueError(f"direction has ambient dim {vec.shape[0]}, expected {target_dim + 1}")
    raw = np.broadcast_to(vec, grid.dims + vec.shape).copy()
    return project_to_sphere(grid, raw)


def great_circle_map(grid, wave=(0.6, 0.4, 0.2, 0.0), phase=0.0, target_dim=2):
    """u = (cos(a.x + b), sin(a.x + b), 0, ...): winds a great circle along ``wave``."""
    a = np.asarray(wave, dtype=np.float64)
    theta = np.einsum("...a,a->...", grid.coords, a) + float(phase)
    vals = np.zeros(grid.dims + (target_dim + 1,), dtype=np.float64)
    vals[..., 0] = np.cos(theta)
    vals[..., 1] = np.sin(theta)
    return SphereMap(grid, vals)


def random_tangent_modes(grid, u, seed, n_modes=3, margin=0.25, max_mode=2):
    """Smooth analytic tangential field, compactly supported via the margin window.

    Sums ``n_modes`` products of low-frequency sines with Philox-drawn ambient
    directions, windows them inside the margin shell (skipped when ``margin``
    is None), and projects tangentially at each node.  Resolution-independent:
    the same (seed, margin) describe the same continuum field on any grid over
    the same box.
    """
    rng = counter_rng(seed, 7)
    d = u.ambient_dim
    lo = np.array([c[0] for c in grid.axis_coords])
    if grid.periodic:
        width = np.array([grid.dims[a] * grid.spacing[a] for a in range(4)])
    else:
        width = np.array([c[-1] - c[0] for c in grid.axis_coords])
    s = (grid.coords - lo) / width
    field = np.zeros(grid.dims + (d,), dtype=np.float64)
    for _ in range(n_modes):
        modes = rng.integers(1, max_mode + 1, size=4)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=4)
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        shape = np.ones(grid.dims, dtype=np.float64)
        for a in range(4):
            if grid.periodic:
                shape *= np.sin(2.0 * np.pi * modes[a] * s[..., a] + phases[a])
            else:
                shape *= np.sin(np.pi * modes[a] * s[..., a] + phases[a])
        field += shape[..., None] * direction
    if margin is not None:
        field *= smooth_bump(grid, margin=margin)[..., None]
    return tangent_project(u.values, field)


def perturbed_great_circle_map(grid, wave=(0.6, 0.4, 0.2, 0.0), amplitude=0.1,
                               seed=0, margin=0.25, target_dim=2, n_modes=3):
    """Great circle plus a seeded tangential perturbation of given sup-amplitude.

    With the default margin the perturbation vanishes on (and well beyond) the
    two boundary layers, so the clamped data of a flow started here is the
    unperturbed great circle.  ``margin=None`` gives an unwindowed smooth map,
    useful for interior residual comparisons.
    """
    base = great_circle_map(grid, wave=wave, target_dim=target_dim)
    xi = random_tangent_modes(grid, base, seed=seed, margin=margin, n_modes=n_modes)
    sup = float(np.max(np.linalg.norm(xi, axis=-1)))
    if sup > 0.0:
        xi *= float(amplitude) / sup
    support = np.linalg.norm(xi, axis=-1) > 0.0
    vals = base.values.copy()
    perturbed = vals + xi
    norms = np.linalg.norm(perturbed, axis=-1)
    vals[support] = (perturbed / norms[..., None])[support]
    return SphereMap(grid, vals)
