"""Precommitment policy synthesis and the deployable grid controller.

The optimal policy for a committed initial state x0 and risk level alpha is
stationary in the augmented state: it fixes the dual variable s* minimizing
the bi-level objective at x0, then plays the greedy selector of the
converged value grid for that s.  Deployment tracks the running maximum z
alongside the physical state and looks the control up at the nearest grid
node (controls need not vary continuously, so interpolating them would be
meaningless)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InternalConsistencyError
from .grids import box_contains
from .model import MdpModel
from .risk import RiskResult, VsFamily
from .value_iteration import SelectorTable, bellman_backup


@dataclass
class PrecommitmentPolicy:
    """Stationary augmented-feedback controller committed at (alpha, x0)."""

    alpha: float
    x0: np.ndarray
    s_star: float
    selector: SelectorTable
    model: MdpModel
    z_init: float = 0.0

    def act(self, x, z) -> float:
        return act(self, x, z)

    def act_batch(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Vectorized nearest-node lookup; x is (m, d), z is (m,)."""
        x = np.asarray(x, dtype=float)
        z = np.asarray(z, dtype=float)
        idx = tuple(
            a.nearest(x[:, j]) for j, a in enumerate(self.model.state_axes)
        ) + (self.model.z_axis.nearest(z),)
        controls = self.selector.controls[idx]
        return self.model.control_axis.lo + controls * self.model.control_axis.spacing


def synthesize(family: VsFamily, result: RiskResult, x0) -> PrecommitmentPolicy:
    """Bind the selector for s*(x0) into a deployable policy.

    x0 is mapped to its nearest state node to read the committed dual
    variable; optimality holds for the committed initial state, deployment
    from other states is an approximation (documented in the README).
    """
    if family.model is None:
        raise DomainError("family must carry its model to synthesize a policy")
    model = family.model
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not box_contains(model.state_axes, x0):
        raise DomainError(f"x0={x0} outside the state grid bounding box")
    node_idx = tuple(a.nearest(x0[j]) for j, a in enumerate(model.state_axes))
    s_star = float(result.s_star[node_idx])
    i = family.index_of(s_star)
    report = family.reports[i] if family.reports else None
    if report is not None and not report.converged:
        raise InternalConsistencyError(
            f"value grid for s*={s_star} did not converge; refusing to synthesize"
        )
    if family.selectors is not None:
        selector = family.selectors[i]
    else:
        _, selector = bellman_backup(model, family.vs_grids[i])
    return PrecommitmentPolicy(
        alpha=result.alpha,
        x0=x0,
        s_star=s_star,
        selector=selector,
        model=model,
    )


def act(policy: PrecommitmentPolicy, x, z) -> float:
    """Control value at the nearest augmented grid node to (x, z)."""
    model = policy.model
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not box_contains(model.state_axes, x):
        raise DomainError(f"state {x} outside the grid bounding box")
    if not (model.z_axis.lo - 1e-12 <= float(z) <= model.z_axis.hi + 1e-12):
        raise DomainError(f"running maximum {z} outside [0, {model.z_axis.hi}]")
    idx = tuple(a.nearest(x[j]) for j, a in enumerate(model.state_axes)) + (
        int(model.z_axis.nearest(float(z))),
    )
    k = int(policy.selector.controls[idx])
    return float(model.control_axis.node(k))
