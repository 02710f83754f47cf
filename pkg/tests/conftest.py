"""Shared fixtures and model builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

import cvarsafe as cs
from cvarsafe.grids import GridAxis
from cvarsafe.model import DiscreteDistribution, MdpModel


def random_grid_model(rng: np.random.Generator, dim: int = 2) -> MdpModel:
    """Small random model with contracting dynamics (fast VI convergence).

    x' = clip(A x + b u + e w + d) with ||A|| small, cost = min(w . |x - m|
    + q u, cost_bound).  Costs are continuous, in [0, 1], and the state
    collapses toward a fixed point, so the running maximum saturates after
    a few steps.
    """
    n_axis = rng.integers(4, 7, size=dim)
    axes = [GridAxis(0.0, 1.0, int(n)) for n in n_axis]
    cost_bound = 1.0
    z_axis = GridAxis(0.0, cost_bound, int(rng.integers(5, 9)))
    control_axis = GridAxis(0.0, 1.0, int(rng.integers(3, 6)))

    A = rng.uniform(-0.3, 0.3, size=(dim, dim))
    A *= 0.5 / max(np.abs(A).sum(axis=1).max(), 0.5)
    b = rng.uniform(-0.2, 0.2, size=dim)
    e = rng.uniform(-0.3, 0.3, size=dim)
    d = rng.uniform(0.2, 0.6, size=dim)

    n_atoms = int(rng.integers(2, 4))
    raw = rng.uniform(0.2, 1.0, size=n_atoms)
    dist = DiscreteDistribution(
        values=rng.uniform(-1.0, 1.0, size=n_atoms), probs=raw / raw.sum()
    )

    weights = rng.uniform(0.2, 1.0, size=dim)
    center = rng.uniform(0.0, 1.0, size=dim)
    q = float(rng.uniform(0.0, 0.3))

    def dynamics(x, u, w):
        x = np.asarray(x, dtype=float)
        lin = np.tensordot(x, A.T, axes=([-1], [0]))
        return lin + np.asarray(u, dtype=float)[..., None] * b \
            + np.asarray(w, dtype=float)[..., None] * e + d

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        raw_cost = np.tensordot(np.abs(x - center), weights, axes=([-1], [0])) \
            + q * np.asarray(u, dtype=float)
        return np.minimum(raw_cost, cost_bound)

    model = MdpModel(
        state_axes=axes,
        z_axis=z_axis,
        control_axis=control_axis,
        dynamics=dynamics,
        stage_cost=cost,
        cost_bound=cost_bound,
        constant_disturbance=dist,
        vectorized=True,
        name="random-toy",
    )
    model.validate()
    return model


def finite_bridge_model(fmdp: cs.FiniteMdp, cost_bound: float = 1.0, nz: int = 5) -> MdpModel:
    """Grid model exactly equivalent to a finite MDP.

    States sit on integer nodes, disturbance atoms are atom indices, and
    cost values must lie on the z lattice linspace(0, cost_bound, nz), so
    every interpolation in the grid solver degenerates to exact lookups.
    """
    z_nodes = np.linspace(0.0, cost_bound, nz)
    for c in np.unique(fmdp.cost):
        if not np.any(z_nodes == c):
            raise ValueError(f"cost value {c} is not on the z lattice")
    nx, nu = fmdp.n_states, fmdp.n_controls
    n_atoms = fmdp.probs.shape[2]

    def dynamics(x, u, w):
        i = int(round(float(np.asarray(x).ravel()[0])))
        k = int(round(float(u) * (nu - 1)))
        return np.array([float(fmdp.next_state[i, k, int(w)])])

    def cost(x, u):
        i = int(round(float(np.asarray(x).ravel()[0])))
        k = int(round(float(u) * (nu - 1)))
        return float(fmdp.cost[i, k])

    def disturbance(x, u):
        i = int(round(float(np.asarray(x).ravel()[0])))
        k = int(round(float(u) * (nu - 1)))
        return DiscreteDistribution(values=np.arange(n_atoms, dtype=float),
                                    probs=fmdp.probs[i, k])

    model = MdpModel(
        state_axes=[GridAxis(0.0, float(nx - 1), nx)],
        z_axis=GridAxis(0.0, cost_bound, nz),
        control_axis=GridAxis(0.0, 1.0, nu),
        dynamics=dynamics,
        stage_cost=cost,
        cost_bound=cost_bound,
        disturbance=disturbance,
        vectorized=False,
        name="finite-bridge",
    )
    model.validate()
    return model


def lattice_finite_mdp(rng: np.random.Generator, n_states: int = 3, n_controls: int = 2,
                       n_atoms: int = 2, nz: int = 5) -> cs.FiniteMdp:
    """Random finite MDP whose costs sit on the z lattice of `finite_bridge_model`."""
    levels = np.linspace(0.0, 1.0, nz)[: nz - 1]  # keep strictly below the bound
    cost = rng.choice(levels, size=(n_states, n_controls))
    nxt = rng.integers(0, n_states, size=(n_states, n_controls, n_atoms))
    raw = rng.uniform(0.1, 1.0, size=(n_states, n_controls, n_atoms))
    return cs.FiniteMdp(
        cost=cost,
        next_state=nxt,
        probs=raw / raw.sum(axis=2, keepdims=True),
        z_values=np.concatenate([[0.0], np.unique(cost)]),
        cost_bound=1.0,
    )


REDUCED_S_GRID = np.linspace(0.0, 2.0, 11)
REDUCED_TOL = 5e-6


@pytest.fixture(scope="session")
def reduced_model():
    return cs.stormwater.make_model(state_nodes=(26, 31), z_nodes=11, control_nodes=11)


@pytest.fixture(scope="session")
def reduced_family(reduced_model):
    return cs.compute_vs_family(
        reduced_model, REDUCED_S_GRID, tol=REDUCED_TOL, max_iter=3000
    )
