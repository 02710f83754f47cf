"""Two-tank stormwater system: the reference model instance.

Two tanks are connected by an automated valve.  Surface runoff splits
between the tanks; tank 2 drains to a storm sewer.  The stage cost
penalizes levels exceeding the combined-sewer thresholds,
c(x, u) = max(x1 - k1, x2 - k2, 0).

The level dynamics here are a re-specification: one explicit Euler step of
a tank mass balance with orifice-type valve and drain flows.  Coefficients
are calibrated so that a mean-runoff equilibrium sits below the thresholds,
sustained worst-case runoff floods the system slowly but surely, and one
step moves levels on the order of a grid cell.  All coefficients are
config-exposed; the defaults are calibration choices of this package, not
values from any external source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ModelValidationError
from .grids import GridAxis
from .model import DiscreteDistribution, MdpModel


def three_point_runoff(mean: float = 2.0, var: float = 0.3, delta: float = 1.0) -> DiscreteDistribution:
    """Symmetric 3-atom distribution {mean-delta, mean, mean+delta} with the given moments.

    Solves the outer weight p from var = 2 p delta^2; the construction is
    exact, and the constructor re-validates the probabilities.
    """
    if delta <= 0:
        raise ModelValidationError("delta must be > 0")
    p = var / (2.0 * delta**2)
    if not 0.0 < p <= 0.5:
        raise ModelValidationError(
            f"cannot match variance {var} with delta {delta}: outer weight {p} not in (0, 0.5]"
        )
    dist = DiscreteDistribution(
        values=np.array([mean - delta, mean, mean + delta]),
        probs=np.array([p, 1.0 - 2.0 * p, p]),
    )
    m, v = float(dist.mean()), float(dist.variance())
    if abs(m - mean) > 1e-9 or abs(v - var) > 1e-9:
        raise ModelValidationError(f"runoff moments off: mean {m}, variance {v}")
    return dist


@dataclass
class StormwaterParams:
    """Physical parameters of the two-tank system (ft, ft^2, s, cfs)."""

    k1: float = 3.0               # overflow threshold, tank 1 (ft)
    k2: float = 4.0               # overflow threshold, tank 2 (ft)
    area1: float = 100.0          # surface area, tank 1 (ft^2)
    area2: float = 100.0          # surface area, tank 2 (ft^2)
    valve_coeff: float = 1.2      # max valve flow = coeff * sqrt(level1) (cfs)
    drain_coeff: float = 1.03     # drain flow = coeff * sqrt(level2) (cfs)
    split1: float = 0.5           # runoff fraction entering tank 1
    dt: float = 15.0              # Euler step (s)
    x1_max: float = 5.0
    x2_max: float = 6.0
    runoff: DiscreteDistribution = field(default_factory=three_point_runoff)

    def __post_init__(self):
        if not 0.0 <= self.split1 <= 1.0:
            raise ModelValidationError("split1 must be in [0, 1]")
        m, v = float(self.runoff.mean()), float(self.runoff.variance())
        if abs(m - 2.0) > 1e-9 or abs(v - 0.3) > 1e-9:
            raise ModelValidationError(
                f"runoff distribution must have mean 2 and variance 0.3; got {m}, {v}"
            )

    @property
    def cost_bound(self) -> float:
        return max(self.x1_max - self.k1, self.x2_max - self.k2)


def stormwater_cost(x, u, k1: float = 3.0, k2: float = 4.0):
    """c(x, u) = max(x1 - k1, x2 - k2, 0); independent of the valve position."""
    x = np.asarray(x, dtype=float)
    exc1 = x[..., 0] - k1
    exc2 = x[..., 1] - k2
    return np.maximum(np.maximum(exc1, exc2), 0.0)


def stormwater_dynamics(params: StormwaterParams, x, u, w):
    """One Euler step of the tank mass balance (levels clamped by the model layer).

    Tank 1 gains its runoff share and loses the valve flow
    valve_coeff * u * sqrt(max(x1, 0)); tank 2 gains the valve flow plus its
    runoff share and loses the drain flow drain_coeff * sqrt(max(x2, 0)).
    Each outflow is capped at the stored volume over one step (a tank cannot
    drain below empty), which also keeps levels monotone in their own
    previous value.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    x1 = np.maximum(x[..., 0], 0.0)
    x2 = np.maximum(x[..., 1], 0.0)
    valve = np.minimum(
        params.valve_coeff * u * np.sqrt(x1), x1 * params.area1 / params.dt
    )
    drain = np.minimum(
        params.drain_coeff * np.sqrt(x2), x2 * params.area2 / params.dt
    )
    in1 = params.split1 * w
    in2 = (1.0 - params.split1) * w
    x1n = x1 + (params.dt / params.area1) * (in1 - valve)
    x2n = x2 + (params.dt / params.area2) * (valve + in2 - drain)
    return np.stack(np.broadcast_arrays(x1n, x2n), axis=-1)


def make_model(
    params: StormwaterParams | None = None,
    state_nodes: tuple[int, int] = (51, 61),
    z_nodes: int = 21,
    control_nodes: int = 21,
) -> MdpModel:
    """Assemble the gridded two-tank model.

    Defaults reproduce the reference grid: state box [0,5] x [0,6] ft at 51
    x 61 nodes, z on [0, 2] ft with 21 nodes, 21 valve positions.  Pass
    state_nodes=(26, 31), z_nodes=11, control_nodes=11 for the reduced
    desk-scale grid used in the test suite.
    """
    p = params or StormwaterParams()
    model = MdpModel(
        state_axes=[GridAxis(0.0, p.x1_max, state_nodes[0]), GridAxis(0.0, p.x2_max, state_nodes[1])],
        z_axis=GridAxis(0.0, p.cost_bound, z_nodes),
        control_axis=GridAxis(0.0, 1.0, control_nodes),
        dynamics=lambda x, u, w: stormwater_dynamics(p, x, u, w),
        stage_cost=lambda x, u: stormwater_cost(x, u, p.k1, p.k2),
        cost_bound=p.cost_bound,
        constant_disturbance=p.runoff,
        vectorized=True,
        name="two_tank",
        config=example_config(p, state_nodes, z_nodes, control_nodes),
    )
    model.validate()
    return model


def example_config(
    params: StormwaterParams | None = None,
    state_nodes: tuple[int, int] = (51, 61),
    z_nodes: int = 21,
    control_nodes: int = 21,
) -> dict:
    """Config document for the two-tank builtin (see config.load_config)."""
    p = params or StormwaterParams()
    return {
        "state_grid": [
            {"lo": 0.0, "hi": p.x1_max, "n": state_nodes[0]},
            {"lo": 0.0, "hi": p.x2_max, "n": state_nodes[1]},
        ],
        "z_grid": {"lo": 0.0, "hi": p.cost_bound, "n": z_nodes},
        "control_grid": {"lo": 0.0, "hi": 1.0, "n": control_nodes},
        "cost": {"name": "max_excess", "thresholds": [p.k1, p.k2], "offset": 0.0},
        "dynamics": {
            "name": "two_tank",
            "k1": p.k1,
            "k2": p.k2,
            "area1": p.area1,
            "area2": p.area2,
            "valve_coeff": p.valve_coeff,
            "drain_coeff": p.drain_coeff,
            "split1": p.split1,
            "dt": p.dt,
            "x1_max": p.x1_max,
            "x2_max": p.x2_max,
        },
        "disturbance": {"name": "three_point_runoff", "mean": 2.0, "var": 0.3, "delta": 1.0},
        "cost_bound": p.cost_bound,
    }


def write_example_config(path, reduced: bool = False) -> None:
    """Write the two-tank config file (full reference grid or reduced)."""
    if reduced:
        cfg = example_config(state_nodes=(26, 31), z_nodes=11, control_nodes=11)
    else:
        cfg = example_config()
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
