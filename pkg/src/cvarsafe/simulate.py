"""Monte Carlo validation of the solver: rollouts and CVaR estimation.

Rollouts realize the augmented evolution step by step: draw a control from
the policy, draw a disturbance, advance the state, and fold the stage cost
into the running maximum.  The simulated cost of a horizon-T rollout is
z_T, the largest stage cost seen before T; it increases monotonically with
T, so truncation biases the infinite-horizon CVaR estimate downward.

Each rollout owns an independent counter-based random stream derived from
(seed, rollout index), so estimates do not depend on batching or
scheduling, and extending the horizon of an existing batch reuses and
extends the same streams (coupled truncation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .model import MdpModel
from .risk import EmpiricalDistribution, empirical_cvar


@dataclass
class Trajectory:
    """One simulated path of the augmented system."""

    states: np.ndarray     # (T+1, d)
    controls: np.ndarray   # (T,)
    z_values: np.ndarray   # (T+1,)
    costs: np.ndarray      # (T,)
    horizon: int
    seed: int

    @property
    def y(self) -> float:
        """max stage cost over the horizon (equals the final running max)."""
        return float(self.z_values[-1])


@dataclass
class CvarEstimate:
    point: float
    ci_low: float
    ci_high: float
    n_samples: int
    horizon: int
    seed: int | None = None
    samples: np.ndarray | None = None


def _policy_fn(policy):
    if hasattr(policy, "act"):
        return policy.act
    if callable(policy):
        return policy
    raise DomainError("policy must be callable or expose .act(x, z)")


def rollout(model: MdpModel, policy, x0, T: int, seed: int = 0) -> Trajectory:
    """Simulate T steps of the augmented system from (x0, z=0)."""
    if T < 1:
        raise DomainError("horizon T must be >= 1")
    act = _policy_fn(policy)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = model.clamp_state(np.atleast_1d(np.asarray(x0, dtype=float)))
    z = 0.0
    states = [x.copy()]
    controls = np.empty(T)
    costs = np.empty(T)
    zs = [0.0]
    for t in range(T):
        u = float(act(x, z))
        c = float(model.stage_cost(x, u))
        dist = model.disturbance(x, u)
        k = int(np.searchsorted(np.cumsum(dist.probs), rng.random(), side="right"))
        k = min(k, dist.n_atoms - 1)
        w = dist.values[k]
        x = model.step_state(x, u, w)
        z = max(z, c)
        controls[t] = u
        costs[t] = c
        states.append(x.copy())
        zs.append(z)
    return Trajectory(
        states=np.asarray(states),
        controls=controls,
        z_values=np.asarray(zs),
        costs=costs,
        horizon=T,
        seed=seed,
    )


class _RolloutBatch:
    """n coupled rollouts advanced in lockstep, extensible in horizon."""

    def __init__(self, model: MdpModel, policy, x0, n: int, seed: int):
        self.model = model
        self.act = _policy_fn(policy)
        self.batch_act = getattr(policy, "act_batch", None)
        root = np.random.SeedSequence(seed)
        self.gens = [np.random.default_rng(ss) for ss in root.spawn(n)]
        self.n = n
        x0 = model.clamp_state(np.atleast_1d(np.asarray(x0, dtype=float)))
        self.x = np.tile(x0, (n, 1))
        self.z = np.zeros(n)
        self.t = 0
        self._fast = model.vectorized and model.constant_disturbance is not None
        if self._fast:
            self._cum = np.cumsum(model.constant_disturbance.probs)
            self._atoms = model.constant_disturbance.values

    def _controls(self) -> np.ndarray:
        if self.batch_act is not None:
            return np.asarray(self.batch_act(self.x, self.z), dtype=float)
        return np.array([self.act(self.x[i], self.z[i]) for i in range(self.n)])

    def advance(self, steps: int) -> None:
        uniforms = np.empty((self.n, steps))
        for i, g in enumerate(self.gens):
            uniforms[i] = g.random(steps)
        model = self.model
        for j in range(steps):
            u = self._controls()
            if self._fast:
                c = np.asarray(model.stage_cost(self.x, u), dtype=float)
                k = np.minimum(
                    np.searchsorted(self._cum, uniforms[:, j], side="right"),
                    len(self._cum) - 1,
                )
                w = self._atoms[k]
                self.x = model.step_state(self.x, u, w)
            else:
                c = np.empty(self.n)
                nxt = np.empty_like(self.x)
                for i in range(self.n):
                    c[i] = model.stage_cost(self.x[i], float(u[i]))
                    dist = model.disturbance(self.x[i], float(u[i]))
                    k = int(
                        np.searchsorted(np.cumsum(dist.probs), uniforms[i, j], side="right")
                    )
                    k = min(k, dist.n_atoms - 1)
                    nxt[i] = model.step_state(self.x[i], float(u[i]), dist.values[k])
                self.x = nxt
            self.z = np.maximum(self.z, c)
        self.t += steps


def estimate_cvar(
    model: MdpModel,
    policy,
    x0,
    alpha: float,
    n: int,
    T: int | None = None,
    seed: int = 0,
    bootstrap: int = 200,
    adaptive_tol: float = 1e-3,
    max_T: int = 8192,
) -> CvarEstimate:
    """Empirical CVaR of the simulated maximum cost under a policy.

    With T=None the horizon doubles until the estimate moves by less than
    `adaptive_tol` between doublings (the running maximum converges
    pathwise, so the estimate increases monotonically and settles).  The
    95% confidence interval is a percentile bootstrap over the samples.
    """
    if n < 100:
        raise DomainError("need n >= 100 rollouts")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    batch = _RolloutBatch(model, policy, x0, n, seed)

    if T is not None:
        if T < 1:
            raise DomainError("horizon T must be >= 1")
        batch.advance(T)
        horizon = T
    else:
        horizon = 64
        batch.advance(horizon)
        prev = empirical_cvar(EmpiricalDistribution(batch.z), alpha)
        while horizon < max_T:
            batch.advance(horizon)  # horizon -> 2 * horizon
            horizon *= 2
            cur = empirical_cvar(EmpiricalDistribution(batch.z), alpha)
            if abs(cur - prev) < adaptive_tol:
                break
            prev = cur

    samples = batch.z.copy()
    point = empirical_cvar(EmpiricalDistribution(samples), alpha)
    boot_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(n + 1,)))
    if bootstrap > 0:
        stats = np.empty(bootstrap)
        for b in range(bootstrap):
            resample = samples[boot_rng.integers(0, n, size=n)]
            stats[b] = empirical_cvar(EmpiricalDistribution(resample), alpha)
        lo, hi = np.percentile(stats, [2.5, 97.5])
    else:
        lo = hi = point
    return CvarEstimate(
        point=point,
        ci_low=min(float(lo), point),
        ci_high=max(float(hi), point),
        n_samples=n,
        horizon=horizon,
        seed=seed,
        samples=samples,
    )
