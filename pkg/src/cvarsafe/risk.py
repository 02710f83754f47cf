"""CVaR layer: empirical risk functionals, the dual-variable family, and safe sets.

The risk of the running-maximum cost is computed in two levels.  The inner
level solves one augmented value iteration per dual variable s, and reads
off V_s(x) as the converged value at (x, z=0).  The outer level minimizes
s + V_s(x) / alpha over the finite s grid, which is the sample-free
Rockafellar-Uryasev form of CVaR restricted to s in [0, cost_bound].
Risk-averse safe sets are sublevel sets of the resulting value.

Empirical VaR/CVaR on finite sample sets use the exact forms (the CVaR
minimizer lies at a sample point), so they double as oracles for the
solver's Monte Carlo validation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .model import MdpModel
from .value_iteration import ConvergenceReport, SelectorTable, ValueGrid, value_iteration


# ---------------------------------------------------------------------------
# Empirical distributions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EmpiricalDistribution:
    """Uniformly weighted sample set, kept sorted ascending."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.sort(np.asarray(self.samples, dtype=float).ravel())
        if arr.size == 0:
            raise DomainError("empirical distribution needs at least one sample")
        if not np.all(np.isfinite(arr)):
            raise DomainError("empirical distribution has non-finite samples")
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return int(self.samples.size)


def empirical_var(dist: EmpiricalDistribution, alpha: float) -> float:
    """Smallest sample y with empirical CDF(y) >= 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must be in (0, 1) for VaR, got {alpha}")
    n = dist.n
    idx = int(math.ceil((1.0 - alpha) * n - 1e-12)) - 1
    idx = min(max(idx, 0), n - 1)
    return float(dist.samples[idx])


def empirical_cvar(dist: EmpiricalDistribution, alpha: float) -> float:
    """Exact minimum of s -> s + mean(max(samples - s, 0)) / alpha.

    The minimizer lies at a sample point, so the objective is evaluated at
    every sample and the smallest value returned.  Valid for atomic
    distributions, unlike the conditional-expectation form.
    """
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1] for CVaR, got {alpha}")
    y = dist.samples
    n = dist.n
    suffix = np.concatenate([np.cumsum(y[::-1])[::-1], [0.0]])  # suffix[i] = sum(y[i:])
    counts = n - 1 - np.arange(n)
    tail = suffix[1:] - y * counts  # sum of max(y_j - y_i, 0) over j
    obj = y + tail / (n * alpha)
    return float(np.min(obj))


# ---------------------------------------------------------------------------
# Dual-variable family
# ---------------------------------------------------------------------------

@dataclass
class VsFamily:
    """Converged value grids for a sorted list of dual variables.

    slice_at_z0[i] is V_s(x) = v^s(x, 0) over the state grid for
    s = s_values[i].
    """

    s_values: np.ndarray
    vs_grids: list[ValueGrid]
    slice_at_z0: np.ndarray  # (n_s,) + state_shape
    reports: list[ConvergenceReport]
    selectors: list[SelectorTable] | None = None
    model: MdpModel | None = None

    def grid_for(self, s: float) -> ValueGrid:
        i = self.index_of(s)
        return self.vs_grids[i]

    def index_of(self, s: float) -> int:
        hits = np.nonzero(np.abs(self.s_values - s) <= 1e-12)[0]
        if hits.size == 0:
            raise DomainError(f"s={s} is not in the family s-grid")
        return int(hits[0])


def compute_vs_family(
    model: MdpModel,
    s_values,
    tol: float | None = None,
    max_iter: int = 5000,
    jobs: int = 1,
) -> VsFamily:
    """Run one value iteration per dual variable and collect z=0 slices.

    Non-convergent runs are kept (their reports carry converged=False);
    callers decide whether partial convergence is acceptable.
    """
    s_arr = np.sort(np.unique(np.asarray(s_values, dtype=float)))
    if s_arr.size == 0:
        raise DomainError("need at least one s value")
    if np.any(s_arr < -1e-12) or np.any(s_arr > model.cost_bound + 1e-9):
        raise DomainError(
            f"s values must lie in [0, cost_bound={model.cost_bound}]; got range "
            f"[{s_arr.min()}, {s_arr.max()}]"
        )
    model.compiled()  # build once before any worker threads share it

    def solve(s: float):
        return value_iteration(model, s, max_iter=max_iter, tol=tol)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve, s_arr))
    else:
        results = [solve(s) for s in s_arr]

    grids = [r[0] for r in results]
    selectors = [r[1] for r in results]
    reports = [r[2] for r in results]
    slices = np.stack([g.z0_slice() for g in grids], axis=0)
    return VsFamily(
        s_values=s_arr,
        vs_grids=grids,
        slice_at_z0=slices,
        reports=reports,
        selectors=selectors,
        model=model,
    )


# ---------------------------------------------------------------------------
# Outer minimization over s
# ---------------------------------------------------------------------------

@dataclass
class RiskResult:
    """Optimal risk values and minimizing dual variables over the state grid."""

    alpha: float
    v_star: np.ndarray
    s_star: np.ndarray
    s_values: np.ndarray
    cost_bound: float
    quantization_bound: float
    metadata: dict = field(default_factory=dict)


def _quantization_bound(s_values: np.ndarray, alpha: float) -> float:
    if s_values.size < 2:
        return 0.0
    ds = float(np.max(np.diff(s_values)))
    return (1.0 + 1.0 / alpha) * ds / 2.0


def _bilevel_from_slices(
    s_values: np.ndarray, slices: np.ndarray, alpha: float, cost_bound: float
):
    """min over the s grid of s + V_s / alpha, with lowest-s tie-breaking.

    At alpha == 1 the minimizer is exactly s = 0 whenever the grid contains
    it (costs are nonnegative, so s + E max(Y-s, 0) >= E Y with equality at
    s = 0); selecting it directly keeps the identity V_1* = V_0 exact
    instead of leaving it to numerical ties between independently converged
    runs.
    """
    expand = (slice(None),) + (None,) * (slices.ndim - 1)
    if alpha == 1.0:
        zero_idx = np.nonzero(s_values == 0.0)[0]
        if zero_idx.size:
            i0 = int(zero_idx[0])
            v_star = np.clip(slices[i0], 0.0, cost_bound)
            s_star = np.zeros_like(v_star)
            return v_star, s_star
    cand = s_values[expand] + slices / alpha
    arg = np.argmin(cand, axis=0)
    v_star = np.clip(np.min(cand, axis=0), 0.0, cost_bound)
    s_star = s_values[arg]
    return v_star, s_star


def compute_v_alpha(family: VsFamily, alpha: float) -> RiskResult:
    """Bi-level readout: per state node, minimize s + V_s(x)/alpha over s."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must be in (0, 1], got {alpha}")
    if family.model is not None:
        cost_bound = family.model.cost_bound
    else:
        cost_bound = float(family.s_values[-1])
    v_star, s_star = _bilevel_from_slices(
        family.s_values, family.slice_at_z0, alpha, cost_bound
    )
    qb = _quantization_bound(family.s_values, alpha)
    return RiskResult(
        alpha=float(alpha),
        v_star=v_star,
        s_star=s_star,
        s_values=family.s_values.copy(),
        cost_bound=cost_bound,
        quantization_bound=qb,
        metadata={"s_grid": family.s_values.tolist(), "quantization_bound": qb},
    )


@dataclass
class SafeSet:
    """Boolean mask of states whose optimal risk is at most r."""

    alpha: float
    r: float
    mask: np.ndarray


def safe_set(result: RiskResult, r: float) -> SafeSet:
    if not 0.0 <= r <= result.cost_bound + 1e-12:
        raise DomainError(f"r must lie in [0, cost_bound={result.cost_bound}], got {r}")
    return SafeSet(alpha=result.alpha, r=float(r), mask=result.v_star <= r)


def gamma_criterion(result_nprime: RiskResult, result_n: RiskResult) -> float:
    """Sup over state nodes of |V_hat_N'(x) - V_hat_N(x)|."""
    if result_nprime.v_star.shape != result_n.v_star.shape:
        raise DomainError(
            f"grid mismatch: {result_nprime.v_star.shape} vs {result_n.v_star.shape}"
        )
    if abs(result_nprime.alpha - result_n.alpha) > 1e-15:
        raise DomainError(
            f"alpha mismatch: {result_nprime.alpha} vs {result_n.alpha}"
        )
    return float(np.max(np.abs(result_nprime.v_star - result_n.v_star)))


# ---------------------------------------------------------------------------
# Checkpointed lockstep iteration (outer stopping criterion)
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    sweep: int
    results: dict[float, RiskResult]
    gammas: dict[float, float]


@dataclass
class BilevelRunHistory:
    s_values: np.ndarray
    checkpoint_every: int
    gamma_tol: float
    checkpoints: list[Checkpoint]
    reached: dict[float, int | None]
    sweeps_run: int
    final_grids: list[ValueGrid]

    def gamma_history(self, alpha: float) -> list[float]:
        return [cp.gammas[alpha] for cp in self.checkpoints if alpha in cp.gammas]


def checkpointed_bilevel(
    model: MdpModel,
    s_values,
    alphas,
    gamma_tol: float = 0.005,
    checkpoint_every: int = 20,
    max_sweeps: int = 20000,
) -> BilevelRunHistory:
    """Advance all dual-variable iterations in lockstep with checkpoints.

    Every `checkpoint_every` sweeps the bi-level risk values are formed from
    the current iterates and compared against the previous checkpoint; the
    sup-norm difference is the outer stopping statistic.  The run stops once
    it is <= gamma_tol for every requested alpha (or at max_sweeps).
    """
    s_arr = np.sort(np.unique(np.asarray(s_values, dtype=float)))
    alphas = [float(a) for a in alphas]
    comp = model.compiled()
    n, nz, m = model.n_state_nodes, model.z_axis.n, s_arr.size
    z = model.z_axis.nodes
    stack = np.empty((n, nz, m))
    for j, s in enumerate(s_arr):
        stack[:, :, j] = np.maximum(z - s, 0.0)[None, :]

    checkpoints: list[Checkpoint] = []
    reached: dict[float, int | None] = {a: None for a in alphas}
    prev_results: dict[float, RiskResult] | None = None
    qb = {a: _quantization_bound(s_arr, a) for a in alphas}
    sweep = 0
    while sweep < max_sweeps:
        for _ in range(checkpoint_every):
            stack, _ = comp.backup(stack)
            sweep += 1
            if sweep >= max_sweeps:
                break
        slices = stack[:, 0, :].T.reshape((m,) + model.state_shape)
        results = {}
        gammas = {}
        for a in alphas:
            v_star, s_star = _bilevel_from_slices(s_arr, slices, a, model.cost_bound)
            res = RiskResult(
                alpha=a,
                v_star=v_star,
                s_star=s_star,
                s_values=s_arr.copy(),
                cost_bound=model.cost_bound,
                quantization_bound=qb[a],
                metadata={"sweep": sweep},
            )
            results[a] = res
            if prev_results is not None:
                g = gamma_criterion(prev_results[a], res)
                gammas[a] = g
                if reached[a] is None and g <= gamma_tol:
                    reached[a] = sweep
        checkpoints.append(Checkpoint(sweep=sweep, results=results, gammas=gammas))
        prev_results = results
        if all(reached[a] is not None for a in alphas):
            break

    shape = model.state_shape + (nz,)
    final_grids = [
        ValueGrid(values=stack[:, :, j].reshape(shape), s=float(s_arr[j]), t=sweep)
        for j in range(m)
    ]
    return BilevelRunHistory(
        s_values=s_arr,
        checkpoint_every=checkpoint_every,
        gamma_tol=gamma_tol,
        checkpoints=checkpoints,
        reached=reached,
        sweeps_run=sweep,
        final_grids=final_grids,
    )
