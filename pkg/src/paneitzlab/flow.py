"""Negative gradient flow of the discrete energy with clamped boundary data.

The flow is descent on the exact discrete energy: a candidate step
``Pi(u - dt * grad)`` on the free nodes is accepted under the Armijo rule
E(u+) <= E(u) - c1 * dt * |grad|^2_{L2(g)} with c1 = 1e-4, halving dt on
rejection (at most 40 times) and growing it by 1.2 after acceptance.  Flow
time is the accumulated sum of accepted steps.  Two boundary layers
(boundary_depth <= 1) stay bit-identical to the initial map, encoding the
Dirichlet and (to O(h)) Neumann data; on periodic grids nothing is clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from paneitzlab.energy import (
    discrete_gradient,
    el_residual,
    energy_breakdown_raw,
    gradient_residual,
    lamm_riviere_residual,
    paneitz_energy,
    residual_l2_norm,
    workspace_for,
)
from paneitzlab.spheremap import SphereMap


def _unchecked_map(grid, values):
    # line-search candidates are normalized immediately before this call
    m = object.__new__(SphereMap)
    object.__setattr__(m, "grid", grid)
    object.__setattr__(m, "values", values)
    return m

ARMIJO_C1 = 1e-4
MAX_HALVINGS = 40
GROWTH = 1.2


class StagnationError(RuntimeError):
    """Step size underflowed (40 halvings without an acceptable step)."""

    def __init__(self, state):
        super().__init__("line search stagnated: no acceptable step after 40 dt halvings")
        self.state = state


@dataclass
class FlowParams:
    dt0: float = 1e-5
    dt_max: float = 1.0
    tol: float = 1e-3
    t_max: float = 1e6
    max_steps: int = 10**6
    residual_every: int = 25


@dataclass
class FlowState:
    u: SphereMap
    t: float
    dt: float
    energy_history: list = field(default_factory=list)  # (t, EnergyBreakdown)
    residual_history: list = field(default_factory=list)  # (t, residual L2 norm)
    clamp: np.ndarray | None = None  # frozen values on boundary_depth <= 1
    steps: int = 0
    backtracks: int = 0
    last_grad_norm: float = 0.0

    @property
    def energy(self):
        return self.energy_history[-1][1].total


def init_flow(u0, chart, params=None):
    """Flow state at t = 0 with the initial energy recorded."""
    params = params or FlowParams()
    grid = u0.grid
    clamp = None if grid.periodic else u0.values[~grid.depth_region(2)].copy()
    state = FlowState(u=u0.copy(), t=0.0, dt=float(params.dt0), clamp=clamp)
    state.energy_history.append((0.0, paneitz_energy(u0, chart)))
    return state


def _flow_weights(chart, free):
    ws = workspace_for(chart)
    cache = getattr(chart, "_flow_weight_cache", None)
    if cache is None:
        cache = np.where(free, ws.w_flat * chart.volume_weight, 0.0)
        object.__setattr__(chart, "_flow_weight_cache", cache)
    return cache


def step(state, chart, dt_max=float("inf")):
    """One accepted Armijo step (or an exact no-op at a zero-gradient point).

    Mutates and returns ``state``.  Raises StagnationError when dt underflows.
    """
    grid = state.u.grid
    free = grid.depth_region(2)
    free_col = free[..., None]
    grad = discrete_gradient(state.u, chart)
    grad *= free_col
    wg = _flow_weights(chart, free)
    gnorm2 = float(np.einsum("abcd,abcdi,abcdi->", wg, grad, grad))
    state.last_grad_norm = float(np.sqrt(gnorm2))
    e_now = state.energy

    if gnorm2 == 0.0:
        # zero-gradient points are exact fixed points: no renormalization churn
        state.dt = min(state.dt * GROWTH, dt_max)
        state.t += state.dt
        state.steps += 1
        state.energy_history.append((state.t, state.energy_history[-1][1]))
        return state

    dt = min(state.dt, dt_max)
    vals = state.u.values
    for _ in range(MAX_HALVINGS + 1):
        cand = vals - dt * grad
        n2 = np.einsum("...i,...i->...", cand, cand)
        if float(np.min(n2[free])) >= 1e-16:
            cand /= np.sqrt(n2)[..., None]
            new_vals = np.where(free_col, cand, vals)
            breakdown = energy_breakdown_raw(new_vals, chart)
            if breakdown.total <= e_now - ARMIJO_C1 * dt * gnorm2:
                state.u = _unchecked_map(grid, new_vals)
                state.t += dt
                state.dt = min(dt * GROWTH, dt_max)
                state.steps += 1
                state.energy_history.append((state.t, breakdown))
                return state
        dt *= 0.5
        state.backtracks += 1
    state.dt = dt
    raise StagnationError(state)


@dataclass
class FlowReport:
    converged: bool
    reason: str
    final_residual: float
    final_gradient_residual: float
    final_lamm_riviere: float | None
    steps: int
    t: float


def run_until(state, chart, params):
    """Iterate ``step`` until the EL residual, t_max, or stagnation stops it.

    The stopping residual is the L^2(g) norm of the independently discretized
    Euler-Lagrange operator over boundary_depth >= 2, checked every
    ``params.residual_every`` accepted steps.  Returns (state, FlowReport)
    with all three residual norms at the end (the conservation-form one only
    on flat charts).
    """
    params = params or FlowParams()
    state.dt = min(state.dt, params.dt_max)
    reason = "t_max"
    converged = False
    res_norm = _el_norm(state, chart)
    state.residual_history.append((state.t, res_norm))
    if params.tol > 0.0 and res_norm <= params.tol:
        converged, reason = True, "tolerance"
    else:
        for _ in range(params.max_steps):
            try:
                step(state, chart, dt_max=params.dt_max)
            except StagnationError:
                reason = "stagnation"
                break
            check_now = state.steps % params.residual_every == 0
            if check_now or state.t >= params.t_max:
                res_norm = _el_norm(state, chart)
                state.residual_history.append((state.t, res_norm))
                if params.tol > 0.0 and res_norm <= params.tol:
                    converged, reason = True, "tolerance"
                    break
            if state.t >= params.t_max:
                reason = "t_max"
                break
        else:
            reason = "max_steps"
    res_norm = _el_norm(state, chart)
    if not state.residual_history or state.residual_history[-1][0] != state.t:
        state.residual_history.append((state.t, res_norm))
    grad_res = residual_l2_norm(gradient_residual(state.u, chart), chart)
    lr = None
    if chart.is_flat:
        lr = residual_l2_norm(lamm_riviere_residual(state.u), chart, depth=3)
    return state, FlowReport(
        converged=converged,
        reason=reason,
        final_residual=res_norm,
        final_gradient_residual=grad_res,
        final_lamm_riviere=lr,
        steps=state.steps,
        t=state.t,
    )


def _el_norm(state, chart):
    return residual_l2_norm(el_residual(state.u, chart), chart)


def clamp_intact(state, grid):
    """True when the frozen boundary layers are bit-identical to the initial data."""
    if state.clamp is None:
        return True
    return bool(np.array_equal(state.u.values[~grid.depth_region(2)], state.clamp))
