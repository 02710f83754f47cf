import numpy as np
import pytest

import cvarsafe as cs
from cvarsafe.errors import DomainError, ModelValidationError
from cvarsafe.grids import GridAxis
from cvarsafe.model import AugmentedState, DiscreteDistribution, MdpModel

from conftest import random_grid_model


def test_distribution_validation():
    with pytest.raises(ModelValidationError):
        DiscreteDistribution(values=[1.0, 2.0], probs=[0.5, 0.48])
    with pytest.raises(ModelValidationError):
        DiscreteDistribution(values=[1.0], probs=[-0.2])
    with pytest.raises(ModelValidationError):
        DiscreteDistribution(values=[], probs=[])
    d = DiscreteDistribution(values=[1.0, 3.0], probs=[0.25, 0.75])
    assert d.mean() == pytest.approx(2.5)


@pytest.fixture(scope="module")
def tank_model():
    return cs.stormwater.make_model(state_nodes=(11, 13), z_nodes=5, control_nodes=5)


def test_evaluate_cost_reference_values(tank_model):
    # thresholds k1 = 3, k2 = 4
    assert cs.evaluate_cost(tank_model, [3.5, 4.0], 0.5) == pytest.approx(0.5)
    assert cs.evaluate_cost(tank_model, [2.0, 3.0], 0.0) == 0.0
    assert cs.evaluate_cost(tank_model, [4.0, 5.9], 1.0) == pytest.approx(1.9)


def test_evaluate_cost_domain_errors(tank_model):
    with pytest.raises(DomainError):
        cs.evaluate_cost(tank_model, [6.0, 0.0], 0.5)
    with pytest.raises(DomainError):
        cs.evaluate_cost(tank_model, [1.0, 1.0], 1.5)


def test_augmented_step_running_max(tank_model):
    aug = AugmentedState(x=[3.5, 4.0], z=0.4)  # cost here is 0.5
    out = cs.augmented_step(tank_model, aug, 0.5, 2.0)
    assert out.z == pytest.approx(0.5)
    aug2 = AugmentedState(x=[2.0, 3.0], z=0.4)  # cost 0 -> z unchanged
    out2 = cs.augmented_step(tank_model, aug2, 0.5, 2.0)
    assert out2.z == 0.4
    aug3 = AugmentedState(x=[3.0, 4.7], z=0.0)  # cost 0.7
    out3 = cs.augmented_step(tank_model, aug3, 0.0, 2.0)
    assert out3.z == pytest.approx(0.7)


def test_augmented_step_fixed_point_dynamics():
    model = MdpModel(
        state_axes=[GridAxis(0.0, 1.0, 3)],
        z_axis=GridAxis(0.0, 1.0, 3),
        control_axis=GridAxis(0.0, 1.0, 2),
        dynamics=lambda x, u, w: np.asarray(x, dtype=float),
        stage_cost=lambda x, u: 0.5 * float(np.asarray(x).ravel()[0]),
        cost_bound=1.0,
        constant_disturbance=DiscreteDistribution(values=[0.0], probs=[1.0]),
    )
    aug = AugmentedState(x=[0.5], z=0.1)
    out = cs.augmented_step(model, aug, 0.0, 0.0)
    assert out.x[0] == 0.5
    assert out.z == pytest.approx(max(0.1, 0.25))


def test_step_state_clamps_to_box(tank_model):
    nxt = tank_model.step_state(np.array([5.0, 6.0]), 0.0, 3.0)
    assert nxt[0] <= 5.0 and nxt[1] <= 6.0
    nxt = tank_model.step_state(np.array([0.0, 0.0]), 1.0, 0.0)
    assert nxt[0] >= 0.0 and nxt[1] >= 0.0


def test_z_monotone_along_trajectory(tank_model):
    rng = np.random.default_rng(5)
    aug = AugmentedState(x=[4.0, 5.0], z=0.0)
    costs = []
    for _ in range(30):
        u = float(rng.uniform(0, 1))
        w = float(rng.choice([1.0, 2.0, 3.0]))
        costs.append(cs.evaluate_cost(tank_model, aug.x, u))
        nxt = cs.augmented_step(tank_model, aug, u, w)
        assert nxt.z >= aug.z
        assert nxt.z == pytest.approx(max([0.0] + costs), abs=0.0)
        aug = nxt


def test_cost_shift_is_exact_everywhere():
    base = cs.stormwater.example_config(state_nodes=(6, 7), z_nodes=5, control_nodes=3)
    shifted_cfg = cs.stormwater.example_config(state_nodes=(6, 7), z_nodes=5, control_nodes=3)
    shifted_cfg["cost"]["offset"] = 0.25
    shifted_cfg["cost_bound"] = 2.25
    shifted_cfg["z_grid"] = {"lo": 0.0, "hi": 2.25, "n": 10}
    m0 = cs.load_config(base)
    m1 = cs.load_config(shifted_cfg)
    us = m0.control_axis.nodes
    for x in m0.state_nodes()[::7]:
        for u in us:
            c0 = cs.evaluate_cost(m0, x, u)
            c1 = cs.evaluate_cost(m1, x, u)
            assert c1 == c0 + 0.25  # bitwise: same computation plus the offset


def test_validate_rejects_negative_and_oversized_costs():
    cfg = cs.stormwater.example_config(state_nodes=(6, 7), z_nodes=5, control_nodes=3)
    cfg["cost"]["offset"] = -0.5
    with pytest.raises((ModelValidationError,)) as err:
        cs.load_config(cfg)
    assert "shift" in str(err.value)

    model = random_grid_model(np.random.default_rng(0))
    old_cost = model.stage_cost
    model.stage_cost = lambda x, u: old_cost(x, u) + 2.0  # above cost_bound
    with pytest.raises(ModelValidationError):
        model.validate()


def test_model_requires_z_axis_matching_cost_bound():
    with pytest.raises(ModelValidationError):
        MdpModel(
            state_axes=[GridAxis(0.0, 1.0, 3)],
            z_axis=GridAxis(0.0, 0.5, 3),
            control_axis=GridAxis(0.0, 1.0, 2),
            dynamics=lambda x, u, w: x,
            stage_cost=lambda x, u: 0.0,
            cost_bound=1.0,
            constant_disturbance=DiscreteDistribution(values=[0.0], probs=[1.0]),
        )
