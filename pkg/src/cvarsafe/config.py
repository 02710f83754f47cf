"""Model configs: a JSON-compatible schema with named builtins.

A config document has sections `state_grid` (list of per-axis lo/hi/n),
`z_grid`, `control_grid`, `cost` (named builtin or expression), `dynamics`
(named builtin plus parameters), `disturbance` (explicit atoms or a named
distribution), and `cost_bound`.  Validation reports the path of the
offending field.  Negative stage costs are rejected at load; the supported
workflow is to shift the cost up by its lower bound (the CLI exposes this
as --shift) and un-shift the outputs afterwards.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .grids import GridAxis
from .model import DiscreteDistribution, MdpModel
from . import stormwater

_TOP_KEYS = {"state_grid", "z_grid", "control_grid", "cost", "dynamics", "disturbance",
             "cost_bound", "shift_applied"}


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}", "required field is missing")
    return section[key]


def _as_number(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


def _parse_axis(section, path: str) -> GridAxis:
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object with lo/hi/n")
    lo = _as_number(_require(section, "lo", path), f"{path}.lo")
    hi = _as_number(_require(section, "hi", path), f"{path}.hi")
    n = _require(section, "n", path)
    if isinstance(n, bool) or not isinstance(n, int) or n < 2:
        raise ConfigError(f"{path}.n", f"expected an integer >= 2, got {n!r}")
    if not lo < hi:
        raise ConfigError(path, f"needs lo < hi, got [{lo}, {hi}]")
    return GridAxis(lo, hi, n)


# ---------------------------------------------------------------------------
# Cost builtins
# ---------------------------------------------------------------------------

def _cost_max_excess(section, dim: int, path: str):
    thresholds = np.asarray(_require(section, "thresholds", path), dtype=float)
    if thresholds.shape != (dim,):
        raise ConfigError(f"{path}.thresholds", f"expected {dim} thresholds, got {thresholds.shape}")
    offset = _as_number(section.get("offset", 0.0), f"{path}.offset")

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        exc = x[..., 0] - thresholds[0]
        for j in range(1, dim):
            exc = np.maximum(exc, x[..., j] - thresholds[j])
        return np.maximum(exc, 0.0) + offset

    return cost


def _cost_weighted_l1(section, dim: int, path: str):
    weights = np.asarray(_require(section, "weights", path), dtype=float)
    center = np.asarray(_require(section, "center", path), dtype=float)
    if weights.shape != (dim,) or center.shape != (dim,):
        raise ConfigError(path, f"weights and center must each have {dim} entries")
    u_weight = _as_number(section.get("u_weight", 0.0), f"{path}.u_weight")
    offset = _as_number(section.get("offset", 0.0), f"{path}.offset")

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        total = np.tensordot(np.abs(x - center), weights, axes=([-1], [0]))
        return total + u_weight * np.asarray(u, dtype=float) + offset

    return cost


def _cost_constant(section, dim: int, path: str):
    offset = _as_number(section.get("offset", 0.0), f"{path}.offset")

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        base = np.zeros(np.broadcast_shapes(x[..., 0].shape, np.shape(u)))
        return base + offset

    return cost


def _cost_expression(section, dim: int, path: str):
    import sympy

    text = section["expr"]
    if not isinstance(text, str):
        raise ConfigError(f"{path}.expr", "expected an expression string")
    offset = _as_number(section.get("offset", 0.0), f"{path}.offset")
    syms = sympy.symbols(" ".join([f"x{j + 1}" for j in range(dim)] + ["u"]))
    local = {s.name: s for s in syms}
    local.update({"max": sympy.Max, "min": sympy.Min, "abs": sympy.Abs, "sqrt": sympy.sqrt})
    try:
        expr = sympy.parse_expr(text, local_dict=local, evaluate=True)
    except (sympy.SympifyError, SyntaxError, TypeError) as exc:
        raise ConfigError(f"{path}.expr", f"cannot parse expression: {exc}") from exc
    extra = expr.free_symbols - set(syms)
    if extra:
        raise ConfigError(f"{path}.expr", f"unknown symbols {sorted(str(s) for s in extra)}")
    fn = sympy.lambdify(syms, expr, modules="numpy")

    def cost(x, u):
        x = np.asarray(x, dtype=float)
        args = [x[..., j] for j in range(dim)] + [np.asarray(u, dtype=float)]
        out = np.asarray(fn(*args), dtype=float)
        return np.broadcast_to(out, np.broadcast_shapes(x[..., 0].shape, np.shape(u))) + offset

    return cost


_COST_BUILTINS = {
    "max_excess": _cost_max_excess,
    "weighted_l1": _cost_weighted_l1,
    "constant": _cost_constant,
}


def _parse_cost(section, dim: int, path: str = "cost"):
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object")
    if "expr" in section:
        return _cost_expression(section, dim, path)
    name = _require(section, "name", path)
    builder = _COST_BUILTINS.get(name)
    if builder is None:
        raise ConfigError(f"{path}.name", f"unknown cost builtin {name!r}; "
                          f"known: {sorted(_COST_BUILTINS)} or use 'expr'")
    return builder(section, dim, path)


# ---------------------------------------------------------------------------
# Dynamics builtins
# ---------------------------------------------------------------------------

def _dyn_two_tank(section, dim: int, path: str):
    if dim != 2:
        raise ConfigError(path, "two_tank dynamics need a 2-D state grid")
    kwargs = {}
    for key in ("k1", "k2", "area1", "area2", "valve_coeff", "drain_coeff",
                "split1", "dt", "x1_max", "x2_max"):
        if key in section:
            kwargs[key] = _as_number(section[key], f"{path}.{key}")
    params = stormwater.StormwaterParams(**kwargs)
    return lambda x, u, w: stormwater.stormwater_dynamics(params, x, u, w), params


def _dyn_affine(section, dim: int, path: str):
    A = np.asarray(_require(section, "A", path), dtype=float)
    if A.shape != (dim, dim):
        raise ConfigError(f"{path}.A", f"expected a {dim}x{dim} matrix, got {A.shape}")
    b_u = np.asarray(section.get("b_u", np.zeros(dim)), dtype=float)
    b_w = np.asarray(section.get("b_w", np.zeros(dim)), dtype=float)
    offset = np.asarray(section.get("offset", np.zeros(dim)), dtype=float)
    for name, vec in (("b_u", b_u), ("b_w", b_w), ("offset", offset)):
        if vec.shape != (dim,):
            raise ConfigError(f"{path}.{name}", f"expected {dim} entries, got {vec.shape}")

    def dynamics(x, u, w):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        lin = np.tensordot(x, A.T, axes=([-1], [0]))
        return lin + u[..., None] * b_u + w[..., None] * b_w + offset

    return dynamics, None


def _dyn_identity(section, dim: int, path: str):
    return (lambda x, u, w: np.asarray(x, dtype=float)), None


_DYN_BUILTINS = {
    "two_tank": _dyn_two_tank,
    "affine": _dyn_affine,
    "identity": _dyn_identity,
}


def _parse_dynamics(section, dim: int, path: str = "dynamics"):
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object")
    name = _require(section, "name", path)
    builder = _DYN_BUILTINS.get(name)
    if builder is None:
        raise ConfigError(f"{path}.name", f"unknown dynamics builtin {name!r}; "
                          f"known: {sorted(_DYN_BUILTINS)}")
    return builder(section, dim, path)


# ---------------------------------------------------------------------------
# Disturbance
# ---------------------------------------------------------------------------

def _parse_disturbance(section, path: str = "disturbance") -> DiscreteDistribution:
    if not isinstance(section, dict):
        raise ConfigError(path, "expected an object")
    if "atoms" in section:
        atoms = section["atoms"]
        if not isinstance(atoms, list) or not atoms:
            raise ConfigError(f"{path}.atoms", "expected a non-empty list")
        values, probs = [], []
        for i, atom in enumerate(atoms):
            if not isinstance(atom, dict):
                raise ConfigError(f"{path}.atoms[{i}]", "expected an object with value/prob")
            values.append(atom.get("value"))
            probs.append(_as_number(_require(atom, "prob", f"{path}.atoms[{i}]"),
                                    f"{path}.atoms[{i}].prob"))
            if values[-1] is None:
                raise ConfigError(f"{path}.atoms[{i}].value", "required field is missing")
        total = sum(probs)
        if any(p < 0 for p in probs) or abs(total - 1.0) > 1e-12:
            raise ConfigError(f"{path}.atoms", f"probabilities must be >= 0 and sum to 1 "
                              f"within 1e-12 (got sum {total!r})")
        return DiscreteDistribution(values=np.asarray(values, dtype=float),
                                    probs=np.asarray(probs, dtype=float))
    name = _require(section, "name", path)
    if name == "three_point_runoff":
        return stormwater.three_point_runoff(
            mean=_as_number(section.get("mean", 2.0), f"{path}.mean"),
            var=_as_number(section.get("var", 0.3), f"{path}.var"),
            delta=_as_number(section.get("delta", 1.0), f"{path}.delta"),
        )
    raise ConfigError(f"{path}.name", f"unknown disturbance builtin {name!r}")


# ---------------------------------------------------------------------------
# Top level
# ---------------------------------------------------------------------------

def load_config(source, shift: float = 0.0) -> MdpModel:
    """Build and validate a model from a config path, JSON string, or dict.

    shift > 0 applies the translation workflow: the cost offset and the cost
    bound move up by `shift` (the z grid is extended to match, keeping its
    spacing), and the applied shift is recorded in the stored config so
    downstream outputs can be un-shifted.
    """
    if isinstance(source, (str, Path)) and Path(source).exists():
        with open(source) as fh:
            raw = json.load(fh)
    elif isinstance(source, str):
        raw = json.loads(source)
    elif isinstance(source, dict):
        raw = json.loads(json.dumps(source))  # private copy
    else:
        raise ConfigError("(root)", f"cannot read config from {type(source).__name__}")
    if not isinstance(raw, dict):
        raise ConfigError("(root)", "config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown top-level section")

    state_section = _require(raw, "state_grid", "(root)")
    if isinstance(state_section, dict):
        state_section = [state_section]
    if not isinstance(state_section, list) or not state_section:
        raise ConfigError("state_grid", "expected a list of axis objects")
    state_axes = [_parse_axis(s, f"state_grid[{i}]") for i, s in enumerate(state_section)]
    dim = len(state_axes)

    cost_bound = _as_number(_require(raw, "cost_bound", "(root)"), "cost_bound")
    if cost_bound <= 0:
        raise ConfigError("cost_bound", f"must be > 0, got {cost_bound}")

    if shift:
        if shift < 0:
            raise ConfigError("shift", "shift must be >= 0")
        cost_sec = dict(raw.get("cost", {}))
        cost_sec["offset"] = float(cost_sec.get("offset", 0.0)) + shift
        raw["cost"] = cost_sec
        z_sec = dict(_require(raw, "z_grid", "(root)"))
        old_axis = _parse_axis(z_sec, "z_grid")
        new_hi = old_axis.hi + shift
        z_sec["hi"] = new_hi
        z_sec["n"] = max(2, int(round((new_hi - old_axis.lo) / old_axis.spacing)) + 1)
        raw["z_grid"] = z_sec
        cost_bound += shift
        raw["cost_bound"] = cost_bound
        raw["shift_applied"] = float(raw.get("shift_applied", 0.0)) + shift

    z_axis = _parse_axis(_require(raw, "z_grid", "(root)"), "z_grid")
    if z_axis.lo != 0.0:
        raise ConfigError("z_grid.lo", "the z grid must start at 0")
    if abs(z_axis.hi - cost_bound) > 1e-9:
        raise ConfigError("z_grid.hi", f"must equal cost_bound ({cost_bound}), got {z_axis.hi}")
    control_axis = _parse_axis(_require(raw, "control_grid", "(root)"), "control_grid")

    cost = _parse_cost(_require(raw, "cost", "(root)"), dim)
    dynamics, tank_params = _parse_dynamics(_require(raw, "dynamics", "(root)"), dim)
    dist = _parse_disturbance(_require(raw, "disturbance", "(root)"))

    if tank_params is not None:
        # stormwater moment invariant: re-validate with the configured runoff
        stormwater.StormwaterParams(**{
            **{k: getattr(tank_params, k) for k in (
                "k1", "k2", "area1", "area2", "valve_coeff", "drain_coeff",
                "split1", "dt", "x1_max", "x2_max")},
            "runoff": dist,
        })

    model = MdpModel(
        state_axes=state_axes,
        z_axis=z_axis,
        control_axis=control_axis,
        dynamics=dynamics,
        stage_cost=cost,
        cost_bound=cost_bound,
        constant_disturbance=dist,
        vectorized=True,
        name=raw["dynamics"].get("name", "custom"),
        config=raw,
    )
    model.validate()
    return model
