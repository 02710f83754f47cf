"""Artifact persistence: value grids, risk tables, policies, manifests.

Value grids are stored as .npy files (row-major float64 with a dimensions
header) next to a JSON sidecar carrying the dual variable, iteration count,
model hash, tolerance, and convergence report.  A run manifest records the
sha256 of every artifact so downstream commands can verify integrity.  All
artifact files are byte-deterministic for a fixed config and seed; the
manifest additionally carries wall-clock timings, which are the one
intentionally non-reproducible field.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import ArtifactError, DomainError
from .model import MdpModel
from .risk import RiskResult, SafeSet
from .simulate import Trajectory
from .value_iteration import ConvergenceReport, SelectorTable, ValueGrid


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


# ---------------------------------------------------------------------------
# Value grids
# ---------------------------------------------------------------------------

def grid_basename(index: int) -> str:
    return f"vs_{index:03d}"


def save_value_grid(
    run_dir,
    index: int,
    grid: ValueGrid,
    report: ConvergenceReport,
    model_hash: str,
    tol: float,
) -> dict:
    """Write the tensor and its sidecar; returns the manifest entry."""
    run_dir = Path(run_dir)
    base = grid_basename(index)
    npy = run_dir / f"{base}.npy"
    meta = run_dir / f"{base}.json"
    np.save(npy, np.ascontiguousarray(grid.values, dtype=np.float64))
    payload = {
        "s": grid.s,
        "t": grid.t,
        "model_hash": model_hash,
        "tol": tol,
        "report": {
            "iterations_run": report.iterations_run,
            "converged": report.converged,
            "residual": report.residual,
            "sup_diff_history": report.sup_diff_history,
        },
    }
    write_json(meta, payload)
    return {
        "s": grid.s,
        "file": npy.name,
        "meta": meta.name,
        "hash": sha256_file(npy),
        "converged": report.converged,
        "iterations": report.iterations_run,
        "residual": report.residual,
    }


def load_value_grid(run_dir, index: int) -> tuple[ValueGrid, ConvergenceReport, dict]:
    run_dir = Path(run_dir)
    base = grid_basename(index)
    npy = run_dir / f"{base}.npy"
    meta_path = run_dir / f"{base}.json"
    if not npy.exists() or not meta_path.exists():
        raise ArtifactError(f"missing value grid artifact {base} in {run_dir}")
    meta = read_json(meta_path)
    values = np.load(npy)
    rep = meta.get("report", {})
    report = ConvergenceReport(
        iterations_run=rep.get("iterations_run", meta.get("t", 0)),
        sup_diff_history=rep.get("sup_diff_history", []),
        converged=rep.get("converged", False),
        residual=rep.get("residual", float("nan")),
    )
    return ValueGrid(values=values, s=float(meta["s"]), t=int(meta["t"])), report, meta


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def write_manifest(run_dir, manifest: dict) -> None:
    write_json(Path(run_dir) / MANIFEST_NAME, manifest)


def read_manifest(run_dir) -> dict:
    path = Path(run_dir) / MANIFEST_NAME
    if not path.exists():
        raise ArtifactError(f"no manifest at {path}")
    return read_json(path)


def verify_manifest(run_dir) -> dict:
    """Check that every referenced artifact exists and matches its hash."""
    run_dir = Path(run_dir)
    manifest = read_manifest(run_dir)
    for entry in manifest.get("grids", []):
        path = run_dir / entry["file"]
        if not path.exists():
            raise ArtifactError(f"missing artifact {path}")
        actual = sha256_file(path)
        if actual != entry["hash"]:
            raise ArtifactError(
                f"hash mismatch for {path}: manifest {entry['hash'][:12]}..., "
                f"file {actual[:12]}..."
            )
    return manifest


# ---------------------------------------------------------------------------
# CSV exports
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = len(columns[0])
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(_fmt(col[i]) for col in columns) + "\n")


def export_risk_csv(model: MdpModel, result: RiskResult, path, mask: np.ndarray | None = None) -> None:
    """Node coordinates, optimal risk value, minimizing s (and mask if given)."""
    nodes = model.state_nodes()
    header = [f"x{j + 1}" for j in range(model.state_dim)] + ["v_star", "s_star"]
    cols = [nodes[:, j] for j in range(model.state_dim)]
    cols += [result.v_star.ravel(), result.s_star.ravel()]
    if mask is not None:
        header.append("mask")
        cols.append(mask.ravel())
    _write_csv(path, header, cols)


def export_safe_set_csv(model: MdpModel, result: RiskResult, ss: SafeSet, path) -> None:
    export_risk_csv(model, result, path, mask=ss.mask)


def export_contour_csv(model: MdpModel, values: np.ndarray, path) -> None:
    """Contour-ready (x1, x2, value) rows; requires a 2-D state grid."""
    if model.state_dim != 2:
        raise DomainError("contour export needs a 2-D state grid")
    nodes = model.state_nodes()
    _write_csv(path, ["x1", "x2", "value"], [nodes[:, 0], nodes[:, 1], values.ravel()])


def export_selector_csv(model: MdpModel, selector: SelectorTable, path) -> None:
    """Selector dump: augmented node coordinates, control index, control value."""
    nodes = model.state_nodes()
    nz = model.z_axis.n
    n = nodes.shape[0]
    state_cols = [np.repeat(nodes[:, j], nz) for j in range(model.state_dim)]
    z_col = np.tile(model.z_axis.nodes, n)
    flat = selector.controls.reshape(n, nz).ravel()
    u_vals = model.control_axis.lo + flat * model.control_axis.spacing
    header = [f"x{j + 1}" for j in range(model.state_dim)] + ["z", "control_index", "control"]
    _write_csv(path, header, state_cols + [z_col, flat, u_vals])


def save_trajectory_csv(traj: Trajectory, path) -> None:
    d = traj.states.shape[1]
    T = traj.horizon
    header = ["t"] + [f"x{j + 1}" for j in range(d)] + ["u", "cost", "z"]
    cols = [np.arange(T)]
    cols += [traj.states[:T, j] for j in range(d)]
    cols += [traj.controls, traj.costs, traj.z_values[:T]]
    _write_csv(path, header, cols)


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def save_policy(out_base, policy, model_hash: str) -> dict:
    """Write <base>.npy (selector tensor) and <base>.json (metadata)."""
    out_base = Path(out_base)
    npy = out_base.with_suffix(".npy")
    meta = out_base.with_suffix(".json")
    np.save(npy, np.ascontiguousarray(policy.selector.controls, dtype=np.int32))
    write_json(meta, {
        "alpha": policy.alpha,
        "x0": [float(v) for v in np.atleast_1d(policy.x0)],
        "s_star": policy.s_star,
        "z_init": policy.z_init,
        "model_hash": model_hash,
    })
    return {"file": npy.name, "meta": meta.name, "hash": sha256_file(npy)}
