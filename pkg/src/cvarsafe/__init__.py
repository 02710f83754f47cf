"""Infinite-horizon CVaR safety analysis on augmented grids.

Compute risk-averse safe sets and optimal precommitment policies for
stochastic control systems whose random cost is the supremum of stage
costs over time.  The pipeline: one value iteration per dual variable s on
the (state, running-maximum) grid, a bi-level minimization over s per risk
level alpha, sublevel-set extraction, policy synthesis, and Monte Carlo
plus exact finite-MDP validation oracles.
"""

from .errors import (
    ArtifactError,
    ConfigError,
    DomainError,
    InternalConsistencyError,
    ModelValidationError,
)
from .grids import GridAxis
from .model import (
    AugmentedState,
    DiscreteDistribution,
    MdpModel,
    augmented_step,
    evaluate_cost,
)
from .config import load_config
from .value_iteration import (
    ConvergenceReport,
    SelectorTable,
    ValueGrid,
    bellman_backup,
    fixed_point_residual,
    init_value,
    phi_apply,
    value_iteration,
)
from .risk import (
    EmpiricalDistribution,
    RiskResult,
    SafeSet,
    VsFamily,
    checkpointed_bilevel,
    compute_v_alpha,
    compute_vs_family,
    empirical_cvar,
    empirical_var,
    gamma_criterion,
    safe_set,
)
from .policy import PrecommitmentPolicy, act, synthesize
from .simulate import CvarEstimate, Trajectory, estimate_cvar, rollout
from .exact import (
    FiniteMdp,
    brute_force_policy_value,
    converged_optimal_value,
    enumerate_stationary_policies,
    exact_optimal_value,
    finite_v_alpha,
    greedy_selector,
    policy_evaluate_recursive,
    random_finite_mdp,
    shifted_copy,
    verification_suite,
)
from . import stormwater

__version__ = "0.1.0"

__all__ = [
    "ArtifactError", "ConfigError", "DomainError", "InternalConsistencyError",
    "ModelValidationError",
    "GridAxis", "AugmentedState", "DiscreteDistribution", "MdpModel",
    "augmented_step", "evaluate_cost", "load_config",
    "ConvergenceReport", "SelectorTable", "ValueGrid", "bellman_backup",
    "fixed_point_residual", "init_value", "phi_apply", "value_iteration",
    "EmpiricalDistribution", "RiskResult", "SafeSet", "VsFamily",
    "checkpointed_bilevel", "compute_v_alpha", "compute_vs_family",
    "empirical_cvar", "empirical_var", "gamma_criterion", "safe_set",
    "PrecommitmentPolicy", "act", "synthesize",
    "CvarEstimate", "Trajectory", "estimate_cvar", "rollout",
    "FiniteMdp", "brute_force_policy_value", "converged_optimal_value",
    "enumerate_stationary_policies", "exact_optimal_value", "finite_v_alpha",
    "greedy_selector", "policy_evaluate_recursive", "random_finite_mdp",
    "shifted_copy", "verification_suite",
    "stormwater",
]
