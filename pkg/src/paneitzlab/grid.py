"""Uniform 4-D lattices with second-order finite-difference calculus.

A :class:`Grid4` is a tensor-product lattice over a rectangular box (or a
4-torus in periodic mode).  Scalar fields are plain ``float64`` arrays of
shape ``grid.dims``; vector fields carry one trailing component axis,
``grid.dims + (d,)``.  All derivative operators are second-order accurate:
central differences in the interior, one-sided stencils on the box faces
where noted.  Fourth-order composites (bilaplacians, residuals) are built
by composing these operators and are only trusted at ``boundary_depth >= 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

AXES = (0, 1, 2, 3)


def _as_tuple4(values, kind, name):
    vals = tuple(kind(v) for v in values)
    if len(vals) != 4:
        raise ValueError(f"{name} must have exactly 4 entries, got {len(vals)}")
    return vals


@dataclass(frozen=True)
class Grid4:
    """Uniform rectangular lattice in R^4.

    Nodes sit at ``origin + i * spacing`` per axis.  In periodic mode the
    lattice is a flat 4-torus with period ``dims[a] * spacing[a]`` and no
    boundary; otherwise the nodes with an extremal index along any axis form
    the boundary layer (``boundary_depth == 0``).
    """

    dims: tuple[int, int, int, int]
    spacing: tuple[float, float, float, float]
    origin: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    periodic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", _as_tuple4(self.dims, int, "dims"))
        object.__setattr__(self, "spacing", _as_tuple4(self.spacing, float, "spacing"))
        object.__setattr__(self, "origin", _as_tuple4(self.origin, float, "origin"))
        for n in self.dims:
            if n < 5:
                raise ValueError(f"need at least 5 nodes per axis for the stencils, got dims={self.dims}")
        for h in self.spacing:
            if not (h > 0.0) or not np.isfinite(h):
                raise ValueError(f"spacing must be positive and finite, got {self.spacing}")

    @classmethod
    def box(cls, lo, hi, nodes, periodic=False):
        """Grid covering the box [lo, hi]^4 with ``nodes`` nodes per axis.

        ``nodes`` may be a single int or one per axis.  In periodic mode the
        nodes cover [lo, hi) and the box width is the period.
        """
        lo = _as_tuple4(lo if np.ndim(lo) else [lo] * 4, float, "lo")
        hi = _as_tuple4(hi if np.ndim(hi) else [hi] * 4, float, "hi")
        nodes = _as_tuple4(nodes if np.ndim(nodes) else [nodes] * 4, int, "nodes")
        div = tuple(n if periodic else n - 1 for n in nodes)
        spacing = tuple((b - a) / d for a, b, d in zip(lo, hi, div))
        return cls(dims=nodes, spacing=spacing, origin=lo, periodic=periodic)

    @property
    def node_count(self):
        return int(np.prod(self.dims))

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @cached_property
    def axis_coords(self):
        return tuple(self.origin[a] + self.spacing[a] * np.arange(self.dims[a]) for a in AXES)

    @cached_property
    def coords(self):
        """Node coordinates, shape ``dims + (4,)``."""
        mesh = np.meshgrid(*self.axis_coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def boundary_depth(self):
        """Minimal lattice distance to a boundary node (large constant if periodic)."""
        if self.periodic:
            return np.full(self.dims, 10**6, dtype=np.int64)
        idx = np.indices(self.dims)
        depth = np.minimum.reduce([np.minimum(idx[a], self.dims[a] - 1 - idx[a]) for a in AXES])
        return depth.astype(np.int64)

    @cached_property
    def interior_mask(self):
        return self.boundary_depth >= 1

    def depth_region(self, k):
        """Boolean mask of nodes with boundary_depth >= k."""
        return self.boundary_depth >= k

    def margin_region(self, margin):
        """Nodes at coordinate distance >= margin from every box face.

        Resolution-independent (unlike depth regions), so norms restricted to
        it compare the same continuum region across refinements.  The whole
        grid if periodic.
        """
        if self.periodic:
            return np.ones(self.dims, dtype=bool)
        mask = np.ones(self.dims, dtype=bool)
        for a in AXES:
            x = self.axis_coords[a]
            ok = (x - x[0] >= margin - 1e-12) & (x[-1] - x >= margin - 1e-12)
            shape = [1, 1, 1, 1]
            shape[a] = len(x)
            mask &= ok.reshape(shape)
        return mask

    # -- field validation -------------------------------------------------

    def check_scalar(self, f):
        f = np.asarray(f, dtype=np.float64)
        if f.shape != self.dims:
            raise ValueError(f"scalar field shape {f.shape} does not match grid dims {self.dims}")
        return f

    def check_vector(self, f):
        f = np.asarray(f, dtype=np.float64)
        if f.ndim != 5 or f.shape[:4] != self.dims:
            raise ValueError(f"vector field shape {f.shape} does not match grid dims {self.dims} + (d,)")
        return f

    def check_field(self, f):
        f = np.asarray(f, dtype=np.float64)
        if f.shape[:4] != self.dims or f.ndim not in (4, 5):
            raise ValueError(f"field shape {f.shape} does not match grid dims {self.dims}")
        return f

    # -- shift primitives --------------------------------------------------

    def shift(self, f, axis, k):
        """out(x) = f(x + k*e_axis); zero outside the lattice (wraps if periodic).

        The k=+1/-1 shifts are mutual transposes as linear maps on fields,
        which is what makes the hand-built energy adjoints exact.
        """
        if self.periodic:
            return np.roll(f, -k, axis=axis)
        out = np.zeros_like(f)
        src = [slice(None)] * f.ndim
        dst = [slice(None)] * f.ndim
        if k > 0:
            src[axis] = slice(k, None)
            dst[axis] = slice(None, -k)
        elif k < 0:
            src[axis] = slice(None, k)
            dst[axis] = slice(-k, None)
        else:
            return f.copy()
        out[tuple(dst)] = f[tuple(src)]
        return out

    def cdiff(self, f, axis):
        """Pure central difference along ``axis`` (zero-filled at the faces).

        Valid where both axis-neighbors exist; intended for interior use and
        for the stencil adjoints (transpose is the negative of this map).
        """
        return (self.shift(f, axis, +1) - self.shift(f, axis, -1)) / (2.0 * self.spacing[axis])

    def cdiff2(self, f, axis):
        """Pure central second difference along ``axis`` (zero-filled at the faces)."""
        h2 = self.spacing[axis] ** 2
        return (self.shift(f, axis, +1) - 2.0 * f + self.shift(f, axis, -1)) / h2


class DegenerateProjectionError(ValueError):
    """Raised when a vector to be radially projected is too close to zero."""


def gradient_flat(grid, f):
    """Flat gradient: central in the interior, second-order one-sided on faces.

    Scalar input (shape ``dims``) gives shape ``dims + (4,)``; vector input
    (shape ``dims + (d,)``) gives ``dims + (d, 4)`` with the derivative axis
    last.
    """
    f = grid.check_field(f)
    if grid.periodic:
        parts = [grid.cdiff(f, a) for a in AXES]
    else:
        parts = [np.gradient(f, grid.spacing[a], axis=a, edge_order=2) for a in AXES]
    return np.stack(parts, axis=-1)


def laplacian_flat(grid, f):
    """Flat Laplacian via the 9-point central stencil; zero (masked) at depth 0.

    The returned values on the boundary layer are not meaningful; composite
    operators built on top of this are only evaluated at depth >= 2, where
    every stencil read lands on a valid node.
    """
    f = grid.check_field(f)
    out = np.zeros_like(f)
    for a in AXES:
        out += grid.cdiff2(f, a)
    if not grid.periodic:
        mask = grid.interior_mask
        if f.ndim == 5:
            mask = mask[..., None]
        out = np.where(mask, out, 0.0)
    return out


def _onesided_diff2(f, axis, h):
    """Second derivative along ``axis``: central inside, (2,-5,4,-1)/h^2 on faces."""
    out = (np.roll(f, -1, axis) - 2.0 * f + np.roll(f, 1, axis)) / h**2
    lo = [slice(None)] * f.ndim
    hi = [slice(None)] * f.ndim

    def take(i):
        sl = [slice(None)] * f.ndim
        sl[axis] = i
        return f[tuple(sl)]

    lo[axis] = 0
    out[tuple(lo)] = (2.0 * take(0) - 5.0 * take(1) + 4.0 * take(2) - take(3)) / h**2
    hi[axis] = -1
    out[tuple(hi)] = (2.0 * take(-1) - 5.0 * take(-2) + 4.0 * take(-3) - take(-4)) / h**2
    return out


def hessian_flat(grid, f):
    """Symmetric flat Hessian of a scalar field, shape ``dims + (4, 4)``."""
    f = grid.check_scalar(f)
    out = np.zeros(grid.dims + (4, 4), dtype=np.float64)
    if grid.periodic:
        for a in AXES:
            out[..., a, a] = grid.cdiff2(f, a)
        grads = [grid.cdiff(f, a) for a in AXES]
        for a in AXES:
            for b in range(a + 1, 4):
                mixed = grid.cdiff(grads[a], b)
                out[..., a, b] = mixed
                out[..., b, a] = mixed
        return out
    for a in AXES:
        out[..., a, a] = _onesided_diff2(f, a, grid.spacing[a])
    grads = [np.gradient(f, grid.spacing[a], axis=a, edge_order=2) for a in AXES]
    for a in AXES:
        for b in range(a + 1, 4):
            mixed = np.gradient(grads[a], grid.spacing[b], axis=b, edge_order=2)
            out[..., a, b] = mixed
            out[..., b, a] = mixed
    return out


def region_weights(grid, region=None):
    """Quadrature weights: cell volume per node, trapezoid-halved at region faces.

    ``region`` is a boolean node mask (default: the whole grid).  A node whose
    axis-neighbor leaves the region (or the lattice) gets a 1/2 factor for
    that axis, which reduces to the tensor trapezoid rule on the full box.
    Periodic grids have no faces unless the region introduces them.
    """
    if region is None:
        mask = np.ones(grid.dims, dtype=bool)
    else:
        mask = np.asarray(region, dtype=bool)
        if mask.shape != grid.dims:
            raise ValueError(f"region mask shape {mask.shape} does not match grid dims {grid.dims}")
    w = np.full(grid.dims, grid.cell_volume, dtype=np.float64)
    for a in AXES:
        fac = np.ones(grid.dims, dtype=np.float64)
        fac -= 0.5 * (~grid.shift(mask, a, +1))
        fac -= 0.5 * (~grid.shift(mask, a, -1))
        w *= fac
    return np.where(mask, w, 0.0)


def integrate_flat(grid, f, region=None):
    """Integral of a scalar field against the flat measure over ``region``."""
    f = grid.check_scalar(f)
    return float(np.sum(f * region_weights(grid, region)))
