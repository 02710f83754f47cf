"""Gridded stochastic control system with a running-maximum augmentation.

A model bundles dynamics x' = f(x, u, w), a bounded nonnegative stage cost
c(x, u) in [0, cost_bound], and a finite-support disturbance kernel
p(. | x, u) together with uniform grids for the state box, the
running-maximum axis Z = [0, cost_bound], and the control interval.

The augmented step carries (x, z) to (f(x, u, w), max(z, c(x, u))), so z
records the largest stage cost seen so far.  Dynamics outputs are clamped
componentwise into the state box; this is a modelling choice (physical
saturation), flagged in the README.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ModelValidationError
from .grids import GridAxis, box_clip, box_contains, corner_weights


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support distribution over disturbance vectors."""

    values: np.ndarray  # (n_atoms,) or (n_atoms, d_w)
    probs: np.ndarray   # (n_atoms,)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if len(self.probs) != len(self.values):
            raise ModelValidationError("distribution atoms and probs differ in length")
        if len(self.probs) == 0:
            raise ModelValidationError("distribution needs at least one atom")
        if np.any(self.probs < 0):
            raise ModelValidationError("distribution has a negative probability")
        total = float(np.sum(self.probs))
        if abs(total - 1.0) > 1e-12:
            raise ModelValidationError(
                f"distribution probabilities sum to {total!r}, not 1 within 1e-12"
            )

    @property
    def n_atoms(self) -> int:
        return len(self.probs)

    def mean(self) -> np.ndarray:
        return np.tensordot(self.probs, self.values, axes=(0, 0))

    def variance(self) -> np.ndarray:
        m = self.mean()
        return np.tensordot(self.probs, (self.values - m) ** 2, axes=(0, 0))


@dataclass(frozen=True)
class AugmentedState:
    """System state paired with the running maximum of stage costs."""

    x: np.ndarray
    z: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "z", float(self.z))


@dataclass
class MdpModel:
    """Stochastic control system on uniform grids.

    dynamics(x, u, w) -> next state (array-like, clamped to the box by the
    model layer); stage_cost(x, u) -> float in [0, cost_bound];
    disturbance(x, u) -> DiscreteDistribution.  If the disturbance does not
    depend on (x, u), pass it via `constant_disturbance` so batched code
    paths can be used.

    Builtin models set `vectorized=True`, meaning dynamics/stage_cost accept
    batched inputs with numpy broadcasting.
    """

    state_axes: list[GridAxis]
    z_axis: GridAxis
    control_axis: GridAxis
    dynamics: Callable
    stage_cost: Callable
    cost_bound: float
    disturbance: Callable | None = None
    constant_disturbance: DiscreteDistribution | None = None
    vectorized: bool = False
    name: str = "custom"
    config: dict | None = None
    _compiled: "CompiledTransitions | None" = field(default=None, repr=False)

    def __post_init__(self):
        if self.cost_bound <= 0:
            raise ModelValidationError(f"cost_bound must be > 0, got {self.cost_bound}")
        if abs(self.z_axis.lo) > 0:
            raise ModelValidationError("z axis must start at 0 (running max of nonnegative costs)")
        if abs(self.z_axis.hi - self.cost_bound) > 1e-9:
            raise ModelValidationError(
                f"z axis must span [0, cost_bound]; got hi={self.z_axis.hi}, cost_bound={self.cost_bound}"
            )
        if self.disturbance is None:
            if self.constant_disturbance is None:
                raise ModelValidationError("model needs disturbance or constant_disturbance")
            dist = self.constant_disturbance
            self.disturbance = lambda x, u: dist

    # -- basic geometry -------------------------------------------------

    @property
    def state_shape(self) -> tuple[int, ...]:
        return tuple(a.n for a in self.state_axes)

    @property
    def n_state_nodes(self) -> int:
        return int(np.prod(self.state_shape))

    @property
    def state_dim(self) -> int:
        return len(self.state_axes)

    def state_nodes(self) -> np.ndarray:
        """All state grid nodes, row-major, shape (n_state_nodes, d)."""
        mesh = np.meshgrid(*[a.nodes for a in self.state_axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def clamp_state(self, x) -> np.ndarray:
        return box_clip(self.state_axes, x)

    def step_state(self, x, u, w) -> np.ndarray:
        """Dynamics with the box clamp applied."""
        return self.clamp_state(np.asarray(self.dynamics(x, u, w), dtype=float))

    def model_hash(self) -> str:
        """Stable content hash; from the config when available."""
        if self.config is not None:
            blob = json.dumps(self.config, sort_keys=True).encode()
        else:
            desc = {
                "name": self.name,
                "state_axes": [(a.lo, a.hi, a.n) for a in self.state_axes],
                "z_axis": (self.z_axis.lo, self.z_axis.hi, self.z_axis.n),
                "control_axis": (self.control_axis.lo, self.control_axis.hi, self.control_axis.n),
                "cost_bound": self.cost_bound,
            }
            blob = json.dumps(desc, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    # -- validation ------------------------------------------------------

    def validate(self) -> None:
        """Exhaustive grid scan of the cost and disturbance invariants.

        Checks every (state node, control node): cost in [0, cost_bound]
        and disturbance probabilities summing to 1.  Raises
        ModelValidationError with the offending node.
        """
        xs = self.state_nodes()
        us = self.control_axis.nodes
        if self.vectorized:
            c = np.asarray(self.stage_cost(xs[:, None, :], us[None, :]), dtype=float)
            self._check_cost_block(c, xs, us)
        else:
            for i, x in enumerate(xs):
                for k, u in enumerate(us):
                    c = float(self.stage_cost(x, float(u)))
                    self._check_cost_scalar(c, x, u)
        if self.constant_disturbance is None:
            for x in xs:
                for u in us:
                    self.disturbance(x, float(u))  # constructor validates probs

    def _check_cost_scalar(self, c, x, u):
        if not np.isfinite(c):
            raise ModelValidationError(f"stage cost not finite at x={x}, u={u}")
        if c < 0:
            raise ModelValidationError(
                f"stage cost {c} < 0 at x={x}, u={u}; shift the cost up by its "
                f"lower bound (see the --shift helper) so that c >= 0"
            )
        if c > self.cost_bound + 1e-12:
            raise ModelValidationError(
                f"stage cost {c} exceeds cost_bound {self.cost_bound} at x={x}, u={u}"
            )

    def _check_cost_block(self, c, xs, us):
        if not np.all(np.isfinite(c)):
            i, k = np.argwhere(~np.isfinite(c))[0]
            raise ModelValidationError(f"stage cost not finite at x={xs[i]}, u={us[k]}")
        if np.any(c < 0):
            i, k = np.argwhere(c < 0)[0]
            raise ModelValidationError(
                f"stage cost {c[i, k]} < 0 at x={xs[i]}, u={us[k]}; shift the cost "
                f"up by its lower bound (see the --shift helper) so that c >= 0"
            )
        if np.any(c > self.cost_bound + 1e-12):
            i, k = np.argwhere(c > self.cost_bound + 1e-12)[0]
            raise ModelValidationError(
                f"stage cost {c[i, k]} exceeds cost_bound {self.cost_bound} "
                f"at x={xs[i]}, u={us[k]}"
            )

    # -- compiled transition structure ------------------------------------

    def compiled(self) -> "CompiledTransitions":
        if self._compiled is None:
            self._compiled = CompiledTransitions.build(self)
        return self._compiled


def evaluate_cost(model: MdpModel, x, u) -> float:
    """Stage cost at (x, u), with domain checks.

    x must lie in the state box and u in the control range.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not box_contains(model.state_axes, x):
        raise DomainError(f"state {x} outside the grid bounding box")
    if not np.all(model.control_axis.contains(u)):
        raise DomainError(f"control {u} outside [{model.control_axis.lo}, {model.control_axis.hi}]")
    return float(model.stage_cost(x, float(u)))


def augmented_step(model: MdpModel, aug: AugmentedState, u, w) -> AugmentedState:
    """One step of the augmented system: (x, z) -> (f(x,u,w), max(z, c(x,u))).

    The next state is clamped into the state box; z never decreases.
    """
    c = evaluate_cost(model, aug.x, u)
    x_next = model.step_state(aug.x, float(u), w)
    return AugmentedState(x=x_next, z=max(aug.z, c))


class CompiledTransitions:
    """Precomputed backup ingredients shared across all dual-variable runs.

    For each control node k, `state_op[k]` is a sparse (n, n) matrix whose
    row i holds, for each disturbance atom at (node i, control k), the atom
    probability spread over the multilinear stencil of the clamped next
    state.  Multiplying it into a value tensor flattened over the state grid
    yields the disturbance expectation of the interpolated next-state value.

    The z update is exact on the grid:  max(z_j, c) equals the node z_j
    whenever z_j >= c, so only the value at z = c needs interpolation, via
    (cell index, fraction) stored per (node, control).
    """

    def __init__(self, model: MdpModel):
        self.model = model
        self.n = model.n_state_nodes
        self.nz = model.z_axis.n
        self.nu = model.control_axis.n
        self.cost_table: np.ndarray | None = None   # (n, nu)
        self.state_op: list[sp.csr_matrix] = []
        self.z_cell: np.ndarray | None = None       # (n, nu) int
        self.z_frac: np.ndarray | None = None       # (n, nu) float
        self.z_ge_cost: np.ndarray | None = None    # (n, nu, nz) bool

    @classmethod
    def build(cls, model: MdpModel) -> "CompiledTransitions":
        self = cls(model)
        xs = model.state_nodes()
        us = model.control_axis.nodes
        n, nu = self.n, self.nu

        if model.vectorized:
            cost = np.asarray(model.stage_cost(xs[:, None, :], us[None, :]), dtype=float)
            cost = np.broadcast_to(cost, (n, nu)).copy()
        else:
            cost = np.empty((n, nu))
            for i, x in enumerate(xs):
                for k, u in enumerate(us):
                    cost[i, k] = model.stage_cost(x, float(u))
        self.cost_table = cost

        self.z_cell, self.z_frac = model.z_axis.locate(np.clip(cost, model.z_axis.lo, model.z_axis.hi))
        self.z_ge_cost = model.z_axis.nodes[None, None, :] >= cost[:, :, None]

        fast = model.vectorized and model.constant_disturbance is not None
        for k, u in enumerate(us):
            if fast:
                mat = self._build_control_fast(xs, float(u))
            else:
                mat = self._build_control_slow(xs, float(u))
            self.state_op.append(mat.tocsr())
        return self

    def _build_control_fast(self, xs, u):
        model = self.model
        dist = model.constant_disturbance
        rows, cols, vals = [], [], []
        for w, p in zip(dist.values, dist.probs):
            nxt = model.step_state(xs, u, w)
            nxt = np.atleast_2d(np.asarray(nxt, dtype=float))
            if nxt.shape != (self.n, model.state_dim):
                nxt = np.broadcast_to(nxt, (self.n, model.state_dim))
            flat, wts = corner_weights(model.state_axes, nxt)
            m = flat.shape[1]
            rows.append(np.repeat(np.arange(self.n), m))
            cols.append(flat.ravel())
            vals.append((p * wts).ravel())
        return sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.n, self.n),
        )

    def _build_control_slow(self, xs, u):
        model = self.model
        rows, cols, vals = [], [], []
        for i, x in enumerate(xs):
            dist = model.disturbance(x, u)
            for w, p in zip(dist.values, dist.probs):
                nxt = model.step_state(x, u, w)
                flat, wts = corner_weights(model.state_axes, nxt[None, :])
                rows.extend([i] * flat.shape[1])
                cols.extend(flat[0].tolist())
                vals.extend((p * wts[0]).tolist())
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.n, self.n))

    def backup(self, values: np.ndarray):
        """One Jacobi sweep of the augmented Bellman operator.

        values: (n, nz, m) stack of m value tensors sharing the model
        (e.g. different dual variables).  Returns (new_values, argmin)
        where argmin holds the lowest minimizing control index per node.
        """
        n, nz, m = values.shape
        flat = values.reshape(n, nz * m)
        rows = np.arange(n)
        best = None
        arg = None
        for k in range(self.nu):
            ev = (self.state_op[k] @ flat).reshape(n, nz, m)
            lo = self.z_cell[:, k]
            th = self.z_frac[:, k][:, None]
            at_c = (1.0 - th) * ev[rows, lo, :] + th * ev[rows, lo + 1, :]
            phi = np.where(self.z_ge_cost[:, k, :, None], ev, at_c[:, None, :])
            if best is None:
                best = phi
                arg = np.zeros((n, nz, m), dtype=np.int32)
            else:
                better = phi < best
                best = np.where(better, phi, best)
                arg = np.where(better, np.int32(k), arg)
        return best, arg
