"""Value iteration on the augmented (state, running-maximum) grid.

Starting from v_0(x, z) = max(z - s, 0) for a dual variable s, each sweep
applies the backup

    v_{t+1}(x, z) = min_u  E_w[ v_t( f(x, u, w), max(z, c(x, u)) ) ]

with multilinear interpolation for off-grid arguments.  Sweeps are full
Jacobi sweeps (each reads only the previous grid), which preserves the
provable monotone ascent v_t <= v_{t+1} <= max(cost_bound - s, 0); the
iteration checks that ascent every sweep and treats a violation as an
internal bug.  The greedy selector is extracted from the converged grid,
so at every node it attains the minimum of the backup of that grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InternalConsistencyError
from .grids import interp_flat
from .model import MdpModel

MONOTONE_TOL = 1e-10


@dataclass
class ValueGrid:
    """Value tensor over (state grid x z grid) for one dual variable s."""

    values: np.ndarray  # state_shape + (nz,)
    s: float
    t: int = 0

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1, self.values.shape[-1])

    def z0_slice(self) -> np.ndarray:
        """Value at z = 0 over the state grid (the V_s readout)."""
        return self.values[..., 0].copy()


@dataclass
class SelectorTable:
    """Greedy control indices over (state grid x z grid) for one s."""

    controls: np.ndarray  # int indices, state_shape + (nz,)
    s: float


@dataclass
class ConvergenceReport:
    iterations_run: int
    sup_diff_history: list[float] = field(default_factory=list)
    converged: bool = False
    residual: float = float("nan")


def upper_bound(model: MdpModel, s: float) -> float:
    """Theorem-style envelope max(cost_bound - s, 0) for the iterates."""
    return max(model.cost_bound - s, 0.0)


def init_value(model: MdpModel, s: float) -> ValueGrid:
    """v_0(x, z) = max(z - s, 0) at every node."""
    z = model.z_axis.nodes
    v0 = np.maximum(z - s, 0.0)
    values = np.broadcast_to(v0, model.state_shape + (model.z_axis.n,)).copy()
    return ValueGrid(values=values, s=float(s), t=0)


def phi_apply(model: MdpModel, v: ValueGrid, x, z, u) -> float:
    """Disturbance expectation of v at (f(x,u,w), max(z, c(x,u))).

    Multilinear interpolation over the augmented grid; next states are
    clamped into the state box like everywhere else in the package.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = float(u)
    c = float(model.stage_cost(x, u))
    z_next = min(max(float(z), c), model.z_axis.hi)
    dist = model.disturbance(x, u)
    axes = list(model.state_axes) + [model.z_axis]
    flat_vals = v.values.reshape(-1)
    total = 0.0
    for w, p in zip(dist.values, dist.probs):
        x_next = model.step_state(x, u, w)
        pt = np.concatenate([np.atleast_1d(x_next), [z_next]])
        total += float(p) * float(interp_flat(axes, flat_vals, pt[None, :])[0])
    return total


def bellman_backup(model: MdpModel, v: ValueGrid) -> tuple[ValueGrid, SelectorTable]:
    """One sweep: minimize phi_apply over the control grid at every node.

    Ties pick the lowest control index, for deterministic regression tests.
    """
    comp = model.compiled()
    stacked = v.flat()[:, :, None]
    new_vals, arg = comp.backup(stacked)
    shape = model.state_shape + (model.z_axis.n,)
    new_grid = ValueGrid(values=new_vals[:, :, 0].reshape(shape), s=v.s, t=v.t + 1)
    selector = SelectorTable(controls=arg[:, :, 0].reshape(shape), s=v.s)
    return new_grid, selector


def _check_sweep_invariants(model: MdpModel, prev: np.ndarray, new: np.ndarray, s: float, t: int):
    drop = float(np.max(prev - new))
    if drop > MONOTONE_TOL:
        raise InternalConsistencyError(
            f"monotone ascent violated at sweep {t}: v_t exceeds v_t+1 by {drop:.3e} "
            f"(> {MONOTONE_TOL}); suspect an interpolation or model bug"
        )
    cap = upper_bound(model, s)
    over = float(np.max(new)) - cap
    if over > MONOTONE_TOL:
        raise InternalConsistencyError(
            f"upper envelope violated at sweep {t}: values exceed max(cost_bound - s, 0) "
            f"by {over:.3e}"
        )
    if np.any(np.diff(new, axis=-1) < -MONOTONE_TOL):
        raise InternalConsistencyError(
            f"z-monotonicity violated at sweep {t}: values decrease along the z axis"
        )


def value_iteration(
    model: MdpModel,
    s: float,
    max_iter: int = 5000,
    tol: float | None = None,
) -> tuple[ValueGrid, SelectorTable, ConvergenceReport]:
    """Iterate the backup from v_0 until the sup-norm sweep difference <= tol.

    tol defaults to 1e-6 * cost_bound.  Returns the converged grid, the
    greedy selector extracted from it, and a report carrying the full
    sup-difference history and the fixed-point residual at termination.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    if tol is None:
        tol = 1e-6 * model.cost_bound
    if tol <= 0:
        raise ValueError("tol must be > 0")

    comp = model.compiled()
    grid = init_value(model, s)
    flat = grid.flat()[:, :, None]
    history: list[float] = []
    converged = False
    t = 0
    for t in range(1, max_iter + 1):
        new_flat, _ = comp.backup(flat)
        _check_sweep_invariants(model, flat[:, :, 0], new_flat[:, :, 0], s, t)
        diff = float(np.max(np.abs(new_flat - flat)))
        history.append(diff)
        flat = new_flat
        if diff <= tol:
            converged = True
            break

    shape = model.state_shape + (model.z_axis.n,)
    final = ValueGrid(values=flat[:, :, 0].reshape(shape), s=float(s), t=t)

    extra_flat, arg = comp.backup(flat)
    residual = float(np.max(np.abs(extra_flat - flat)))
    selector = SelectorTable(controls=arg[:, :, 0].reshape(shape), s=float(s))
    report = ConvergenceReport(
        iterations_run=t,
        sup_diff_history=history,
        converged=converged,
        residual=residual,
    )
    return final, selector, report


def fixed_point_residual(model: MdpModel, v: ValueGrid) -> float:
    """sup over nodes of |v - min_u phi_apply(v)|."""
    comp = model.compiled()
    flat = v.flat()[:, :, None]
    new_flat, _ = comp.backup(flat)
    return float(np.max(np.abs(new_flat - flat)))
