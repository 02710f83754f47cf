"""Exact oracles on finite MDPs, for validating the grid solver.

On a finite state/control/disturbance space whose running-maximum values
are closed under the update max(z, c) (always true for {0} plus the range
of the cost), everything is an exact finite sum: the forward DP recursion
evaluates any policy without interpolation, optimal values come from exact
backups, and small instances admit exhaustive enumeration over disturbance
sequences and over entire policy classes.  These routes are deliberately
independent of the grid code so they can cross-check it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ModelValidationError


@dataclass
class FiniteMdp:
    """Finite MDP with exact running-maximum bookkeeping.

    cost[x, u] in [0, cost_bound]; next_state[x, u, k] and probs[x, u, k]
    define the transition kernel atom-wise; z_values must contain 0 and
    every cost value (then max(z, c) never leaves the set).
    """

    cost: np.ndarray
    next_state: np.ndarray
    probs: np.ndarray
    z_values: np.ndarray
    cost_bound: float | None = None
    _zmax: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=float)
        self.next_state = np.asarray(self.next_state, dtype=np.int64)
        self.probs = np.asarray(self.probs, dtype=float)
        self.z_values = np.sort(np.unique(np.asarray(self.z_values, dtype=float)))
        nx, nu = self.cost.shape
        if self.next_state.shape[:2] != (nx, nu) or self.probs.shape != self.next_state.shape:
            raise ModelValidationError("cost/next_state/probs shapes are inconsistent")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=2) - 1.0) > 1e-12):
            raise ModelValidationError("transition probabilities must be >= 0 and sum to 1")
        if np.any((self.next_state < 0) | (self.next_state >= nx)):
            raise ModelValidationError("next_state index out of range")
        if np.any(self.cost < 0):
            raise ModelValidationError("costs must be nonnegative")
        if self.cost_bound is None:
            self.cost_bound = float(self.cost.max())
        if self.z_values[0] != 0.0:
            raise DomainError("z set must contain 0")
        # closure of the z set under max(z, c): every cost value must be a member
        zi = np.searchsorted(self.z_values, self.cost)
        zi = np.clip(zi, 0, self.z_values.size - 1)
        if np.any(self.z_values[zi] != self.cost):
            raise DomainError("z set is not closed under max(z, cost): missing cost values")
        # zmax[x, u, i] = index of max(z_values[i], cost[x, u])
        self._zmax = np.maximum(zi[:, :, None], np.arange(self.z_values.size)[None, None, :])

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_controls(self) -> int:
        return self.cost.shape[1]

    @property
    def n_z(self) -> int:
        return int(self.z_values.size)

    def z_index(self, z: float) -> int:
        i = int(np.searchsorted(self.z_values, z))
        if i >= self.n_z or self.z_values[i] != z:
            raise DomainError(f"z={z} is not a member of the z set")
        return i


def initial_excess(fmdp: FiniteMdp, s: float) -> np.ndarray:
    """v_0 table: max(z - s, 0) over (state, z index)."""
    v0 = np.maximum(fmdp.z_values - s, 0.0)
    return np.tile(v0, (fmdp.n_states, 1))


def apply_policy_step(fmdp: FiniteMdp, v: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """One exact application of the policy DP operator to a value table.

    mu[x, zi] is a control index.  Output[x, zi] is the expectation of
    v(X', max(z, c(x, mu))) under the transition kernel at (x, mu).
    """
    nx = fmdp.n_states
    xs = np.arange(nx)
    probs = fmdp.probs[xs[:, None], mu, :]       # (nx, nz, K)
    nxt = fmdp.next_state[xs[:, None], mu, :]    # (nx, nz, K)
    zm = np.take_along_axis(fmdp._zmax, mu[:, None, :], axis=1)[:, 0, :]  # (nx, nz)
    vals = v[nxt, zm[:, :, None]]                # (nx, nz, K)
    return np.sum(probs * vals, axis=2)


def policy_evaluate_recursive(fmdp: FiniteMdp, policy, s: float, T: int) -> np.ndarray:
    """Expected running-maximum excess after T steps under a policy.

    `policy` is either a stationary (nx, nz) index table or a list of T
    such tables (time-varying).  T = 0 returns the initial excess table.
    The composition applies the last stage's operator innermost.
    """
    if T < 0:
        raise DomainError("T must be >= 0")
    if isinstance(policy, (list, tuple)):
        stages = list(policy)
        if len(stages) < T:
            raise DomainError(f"time-varying policy has {len(stages)} stages, need {T}")
    else:
        stages = [policy] * T
    v = initial_excess(fmdp, s)
    for t in range(T - 1, -1, -1):
        v = apply_policy_step(fmdp, v, np.asarray(stages[t], dtype=np.int64))
    return v


def _exact_q(fmdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    """Q[x, u, zi]: expectation of v at the successor augmented state."""
    vals = v[fmdp.next_state[:, :, :, None], fmdp._zmax[:, :, None, :]]  # (nx,nu,K,nz)
    return np.sum(fmdp.probs[:, :, :, None] * vals, axis=2)


def exact_optimal_value(fmdp: FiniteMdp, s: float, T: int) -> np.ndarray:
    """T exact backups of the min-over-controls operator from the initial excess."""
    if T < 0:
        raise DomainError("T must be >= 0")
    v = initial_excess(fmdp, s)
    for _ in range(T):
        v = _exact_q(fmdp, v).min(axis=1)
    return v


def converged_optimal_value(
    fmdp: FiniteMdp, s: float, tol: float = 1e-13, max_iter: int = 5000
) -> tuple[np.ndarray, int, bool]:
    """Iterate exact backups until the sup difference drops below tol."""
    v = initial_excess(fmdp, s)
    for t in range(1, max_iter + 1):
        nv = _exact_q(fmdp, v).min(axis=1)
        diff = float(np.max(np.abs(nv - v)))
        v = nv
        if diff <= tol:
            return v, t, True
    return v, max_iter, False


def greedy_selector(fmdp: FiniteMdp, v: np.ndarray) -> np.ndarray:
    """Lowest-index argmin of the exact backup at every (state, z) cell."""
    q = _exact_q(fmdp, v)
    return np.argmin(q, axis=1)


def enumerate_stationary_policies(fmdp: FiniteMdp):
    """All deterministic augmented-feedback policies (use on tiny instances)."""
    cells = fmdp.n_states * fmdp.n_z
    for assignment in itertools.product(range(fmdp.n_controls), repeat=cells):
        yield np.asarray(assignment, dtype=np.int64).reshape(fmdp.n_states, fmdp.n_z)


def brute_force_policy_value(fmdp: FiniteMdp, policy, s: float, T: int) -> np.ndarray:
    """Exhaustive enumeration over disturbance sequences.

    Sums prob(branch) * max(z_T - s, 0) over every T-step branch of the
    disturbance tree, for every starting (state, z) cell.  Independent of
    the DP recursion; exponential in T, so keep T small.
    """
    if isinstance(policy, (list, tuple)):
        stages = list(policy)
    else:
        stages = [policy] * T
    out = np.empty((fmdp.n_states, fmdp.n_z))

    def walk(x: int, zi: int, t: int) -> float:
        if t == T:
            return max(fmdp.z_values[zi] - s, 0.0)
        u = int(stages[t][x, zi])
        zi2 = int(fmdp._zmax[x, u, zi])
        total = 0.0
        for k in range(fmdp.probs.shape[2]):
            p = fmdp.probs[x, u, k]
            if p == 0.0:
                continue
            total += p * walk(int(fmdp.next_state[x, u, k]), zi2, t + 1)
        return total

    for x in range(fmdp.n_states):
        for zi in range(fmdp.n_z):
            out[x, zi] = walk(x, zi, 0)
    return out


def finite_v_alpha(
    fmdp: FiniteMdp, s_grid, alpha: float, T: int | None = None
) -> np.ndarray:
    """Bi-level risk readout on a finite MDP (z starts at its 0 entry).

    Uses exact optimal values at horizon T (or converged values when T is
    None) and minimizes s + V_s / alpha over the given s grid.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    s_grid = np.sort(np.asarray(s_grid, dtype=float))
    zi0 = fmdp.z_index(0.0)
    slices = []
    for s in s_grid:
        if T is None:
            v, _, _ = converged_optimal_value(fmdp, s)
        else:
            v = exact_optimal_value(fmdp, s, T)
        slices.append(v[:, zi0])
    cand = s_grid[:, None] + np.stack(slices, axis=0) / alpha
    return np.clip(cand.min(axis=0), 0.0, fmdp.cost_bound)


def shifted_copy(fmdp: FiniteMdp, b: float) -> FiniteMdp:
    """Same MDP with all costs shifted up by b (z set rebuilt accordingly)."""
    if b <= 0:
        raise DomainError("shift must be > 0")
    new_cost = fmdp.cost + b
    z = np.concatenate([[0.0], np.unique(new_cost)])
    return FiniteMdp(
        cost=new_cost,
        next_state=fmdp.next_state.copy(),
        probs=fmdp.probs.copy(),
        z_values=z,
        cost_bound=fmdp.cost_bound + b,
    )


def random_finite_mdp(
    rng: np.random.Generator,
    n_states: int = 4,
    n_controls: int = 2,
    n_atoms: int = 2,
    cost_levels=(0.0, 0.3, 0.7, 1.0),
) -> FiniteMdp:
    """Random small instance with costs drawn from a fixed level set."""
    cost = rng.choice(np.asarray(cost_levels, dtype=float), size=(n_states, n_controls))
    nxt = rng.integers(0, n_states, size=(n_states, n_controls, n_atoms))
    raw = rng.uniform(0.1, 1.0, size=(n_states, n_controls, n_atoms))
    probs = raw / raw.sum(axis=2, keepdims=True)
    z = np.concatenate([[0.0], np.unique(cost)])
    return FiniteMdp(
        cost=cost,
        next_state=nxt,
        probs=probs,
        z_values=z,
        cost_bound=float(max(np.max(cost), np.max(cost_levels))),
    )


def verification_suite(seed: int = 0) -> list[tuple[str, bool, str]]:
    """Cross-checks between the exact routes, suitable for a CLI gate.

    Returns (name, passed, detail) per check.
    """
    rng = np.random.default_rng(seed)
    results: list[tuple[str, bool, str]] = []

    fmdp = random_finite_mdp(rng)

    # forward recursion vs exhaustive enumeration
    worst = 0.0
    for _ in range(10):
        pol = rng.integers(0, fmdp.n_controls, size=(fmdp.n_states, fmdp.n_z))
        for s in (0.0, 0.3, 1.0):
            a = policy_evaluate_recursive(fmdp, pol, s, 5)
            b = brute_force_policy_value(fmdp, pol, s, 5)
            worst = max(worst, float(np.max(np.abs(a - b))))
    results.append((
        "recursion-vs-enumeration", worst <= 1e-12, f"max |diff| = {worst:.2e}"
    ))

    # sandwich: optimal below every policy, greedy below converged value
    small = random_finite_mdp(rng, n_states=2, n_controls=2, n_atoms=2,
                              cost_levels=(0.0, 0.4, 0.9))
    s = 0.2
    v_conv, _, ok = converged_optimal_value(small, s)
    v_t = exact_optimal_value(small, s, 12)
    lower_ok = ok
    for pol in enumerate_stationary_policies(small):
        jt = policy_evaluate_recursive(small, pol, s, 12)
        if np.any(v_t > jt + 1e-9):
            lower_ok = False
            break
    greedy = greedy_selector(small, v_conv)
    j_greedy = policy_evaluate_recursive(small, greedy, s, 40)
    upper_ok = bool(np.all(j_greedy <= v_conv + 1e-9))
    results.append((
        "optimality-sandwich", lower_ok and upper_ok,
        "optimal <= every policy and greedy <= converged value"
    ))

    # translation shift of the bi-level readout
    s_grid = np.array([0.0, 0.25, 0.5, 1.0])
    base = finite_v_alpha(fmdp, s_grid, alpha=0.3, T=25)
    shifted = finite_v_alpha(shifted_copy(fmdp, 0.5), s_grid + 0.5, alpha=0.3, T=25)
    err = float(np.max(np.abs(shifted - (base + 0.5))))
    results.append(("translation-shift", err <= 1e-9, f"max |diff| = {err:.2e}"))

    return results
