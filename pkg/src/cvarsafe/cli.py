"""Command-line front end: solve -> safesets -> policy -> simulate pipelines.

Artifacts live in a run directory with a manifest of content hashes, so
every downstream command verifies what it reads and reruns are resumable.
Exit codes: 0 success, 1 internal/oracle failure, 2 partial convergence,
3 validation error, 4 missing or corrupted artifacts.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import exact, io, policy as policy_mod, risk, simulate, stormwater
from .errors import ArtifactError, ConfigError, DomainError, InternalConsistencyError, ModelValidationError
from .value_iteration import value_iteration

DEFAULT_ALPHAS = [0.05, 0.0005]
DEFAULT_R_LEVELS = [0.2, 0.5, 0.6, 0.8, 1.0, 1.2, 1.5, 1.8]
OUT_ENV = "CVARSAFE_OUT"


def _parse_s_grid(spec: str, cost_bound: float) -> np.ndarray:
    if spec is None:
        return np.linspace(0.0, cost_bound, 21)
    try:
        lo_s, hi_s, n_s = spec.split(":")
        lo, hi, n = float(lo_s), float(hi_s), int(n_s)
    except ValueError as exc:
        raise ConfigError("--s-grid", f"expected lo:hi:n, got {spec!r}") from exc
    if n < 1 or (n > 1 and not lo < hi):
        raise ConfigError("--s-grid", f"bad range {spec!r}")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def _parse_x0(spec: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in spec.split(",")])
    except ValueError as exc:
        raise ConfigError("--x0", f"expected comma-separated numbers, got {spec!r}") from exc


def _tag(v: float) -> str:
    return f"{v:g}".replace("-", "m").replace(".", "p")


def _default_out(config_path: str) -> Path:
    root = os.environ.get(OUT_ENV, "runs")
    return Path(root) / Path(config_path).stem


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    shift = args.shift or 0.0
    model = config_mod.load_config(args.config, shift=shift)
    out = Path(args.out) if args.out else _default_out(args.config)
    out.mkdir(parents=True, exist_ok=True)
    s_grid = _parse_s_grid(args.s_grid, model.cost_bound)
    tol = args.tol if args.tol is not None else 1e-6 * model.cost_bound
    model_hash = model.model_hash()

    # resumable: keep converged grids already on disk that match this run
    pending: list[int] = []
    entries: dict[int, dict] = {}
    for i, s in enumerate(s_grid):
        try:
            grid, report, meta = io.load_value_grid(out, i)
        except ArtifactError:
            pending.append(i)
            continue
        if (
            abs(meta["s"] - s) <= 1e-12
            and meta.get("model_hash") == model_hash
            and meta.get("tol") == tol
            and report.converged
        ):
            entries[i] = {
                "s": float(s),
                "file": io.grid_basename(i) + ".npy",
                "meta": io.grid_basename(i) + ".json",
                "hash": io.sha256_file(out / (io.grid_basename(i) + ".npy")),
                "converged": True,
                "iterations": report.iterations_run,
                "residual": report.residual,
            }
        else:
            pending.append(i)

    if not pending:
        try:
            manifest = io.verify_manifest(out)
            print(f"run already complete in {out} ({len(s_grid)} grids); nothing to do")
            return 0 if all(e["converged"] for e in manifest["grids"]) else 2
        except ArtifactError:
            pass  # grids fine but manifest missing/stale; rebuild it below

    model.compiled()
    t0 = time.perf_counter()

    def solve_one(i: int):
        s = float(s_grid[i])
        t_start = time.perf_counter()
        grid, _, report = value_iteration(model, s, max_iter=args.max_iter, tol=tol)
        entry = io.save_value_grid(out, i, grid, report, model_hash, tol)
        entry["seconds"] = time.perf_counter() - t_start
        return i, entry, report

    if args.jobs > 1 and pending:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            for i, entry, report in pool.map(solve_one, pending):
                entries[i] = entry
                _print_solve_line(s_grid[i], report)
    else:
        for i in pending:
            _, entry, report = solve_one(i)
            entries[i] = entry
            _print_solve_line(s_grid[i], report)

    manifest = {
        "model_hash": model_hash,
        "config": model.config,
        "shift": shift,
        "s_grid": [float(s) for s in s_grid],
        "tol": tol,
        "max_iter": args.max_iter,
        "grids": [entries[i] for i in range(len(s_grid))],
        "timings": {"solve_seconds": time.perf_counter() - t0},
    }
    io.write_manifest(out, manifest)
    n_bad = sum(1 for e in manifest["grids"] if not e["converged"])
    print(f"wrote {len(s_grid)} value grids to {out} ({n_bad} not converged)")
    return 2 if n_bad else 0


def _print_solve_line(s, report):
    flag = "converged" if report.converged else "NOT CONVERGED"
    print(f"  s={float(s):.6g}: {report.iterations_run} sweeps, "
          f"residual {report.residual:.3e}, {flag}")


# ---------------------------------------------------------------------------
# shared run loading
# ---------------------------------------------------------------------------

def _load_run(run_dir):
    manifest = io.verify_manifest(run_dir)
    model = config_mod.load_config(manifest["config"])
    grids, reports = [], []
    for i, _s in enumerate(manifest["s_grid"]):
        grid, report, _meta = io.load_value_grid(run_dir, i)
        grids.append(grid)
        reports.append(report)
    family = risk.VsFamily(
        s_values=np.asarray(manifest["s_grid"], dtype=float),
        vs_grids=grids,
        slice_at_z0=np.stack([g.z0_slice() for g in grids], axis=0),
        reports=reports,
        selectors=None,
        model=model,
    )
    return manifest, model, family


def _unshift_result(result: risk.RiskResult, shift: float) -> risk.RiskResult:
    if not shift:
        return result
    return risk.RiskResult(
        alpha=result.alpha,
        v_star=result.v_star - shift,
        s_star=result.s_star - shift,
        s_values=result.s_values - shift,
        cost_bound=result.cost_bound - shift,
        quantization_bound=result.quantization_bound,
        metadata={**result.metadata, "unshifted_by": shift},
    )


# ---------------------------------------------------------------------------
# safesets / export
# ---------------------------------------------------------------------------

def cmd_safesets(args) -> int:
    manifest, model, family = _load_run(args.run)
    shift = manifest.get("shift", 0.0)
    run = Path(args.run)
    alphas = args.alpha or DEFAULT_ALPHAS
    cost_bound_orig = model.cost_bound - shift
    r_levels = args.r or [r for r in DEFAULT_R_LEVELS if r <= cost_bound_orig + 1e-12]
    for alpha in alphas:
        result = risk.compute_v_alpha(family, alpha)
        shown = _unshift_result(result, shift)
        atag = _tag(alpha)
        io.export_risk_csv(model, shown, run / f"risk_a{atag}.csv")
        if model.state_dim == 2:
            io.export_contour_csv(model, shown.v_star, run / f"contour_a{atag}.csv")
        io.write_json(run / f"risk_a{atag}.json", {
            "alpha": alpha,
            "r_levels": r_levels,
            "s_grid": [float(s) for s in shown.s_values],
            "quantization_bound": result.quantization_bound,
            "shift": shift,
            "model_hash": manifest["model_hash"],
        })
        for r in r_levels:
            ss = risk.safe_set(result, min(r + shift, result.cost_bound))
            io.export_safe_set_csv(
                model, shown, ss, run / f"safeset_a{atag}_r{_tag(r)}.csv"
            )
            print(f"alpha={alpha:g} r={r:g}: {int(ss.mask.sum())}/{ss.mask.size} states safe")
    return 0


def cmd_export(args) -> int:
    manifest, model, family = _load_run(args.run)
    run = Path(args.run)
    for i, s in enumerate(family.s_values):
        io.export_contour_csv(model, family.slice_at_z0[i], run / f"vs_slice_{i:03d}.csv") \
            if model.state_dim == 2 else None
    print(f"exported {len(family.s_values)} V_s slices")
    if args.alpha:
        ns = argparse.Namespace(run=args.run, alpha=args.alpha, r=args.r)
        return cmd_safesets(ns)
    return 0


# ---------------------------------------------------------------------------
# policy / simulate
# ---------------------------------------------------------------------------

def cmd_policy(args) -> int:
    manifest, model, family = _load_run(args.run)
    x0 = _parse_x0(args.x0)
    result = risk.compute_v_alpha(family, args.alpha)
    pol = policy_mod.synthesize(family, result, x0)
    run = Path(args.run)
    base = run / (args.name or f"policy_a{_tag(args.alpha)}_x{_tag(x0[0])}")
    entry = io.save_policy(base, pol, manifest["model_hash"])
    print(f"policy committed at s*={pol.s_star:g}; wrote {entry['file']}")
    if args.csv:
        io.export_selector_csv(model, pol.selector, base.with_suffix(".csv"))
    return 0


def cmd_simulate(args) -> int:
    manifest, model, family = _load_run(args.run)
    shift = manifest.get("shift", 0.0)
    x0 = _parse_x0(args.x0)
    result = risk.compute_v_alpha(family, args.alpha)
    pol = policy_mod.synthesize(family, result, x0)
    est = simulate.estimate_cvar(
        model, pol, x0, args.alpha, n=args.n, T=args.T, seed=args.seed
    )
    node = tuple(a.nearest(x0[j]) for j, a in enumerate(model.state_axes))
    solver_value = float(result.v_star[node])
    report = {
        "alpha": args.alpha,
        "x0": [float(v) for v in x0],
        "n": args.n,
        "horizon": est.horizon,
        "seed": args.seed,
        "s_star": pol.s_star - shift,
        "estimate": est.point - shift,
        "ci_low": est.ci_low - shift,
        "ci_high": est.ci_high - shift,
        "solver_value": solver_value - shift,
        "quantization_bound": result.quantization_bound,
        "shift": shift,
        "model_hash": manifest["model_hash"],
    }
    out = Path(args.run) / f"simulate_a{_tag(args.alpha)}_x{_tag(x0[0])}_seed{args.seed}.json"
    io.write_json(out, report)
    print(f"MC estimate {report['estimate']:.4f} "
          f"[{report['ci_low']:.4f}, {report['ci_high']:.4f}] "
          f"vs solver {report['solver_value']:.4f} "
          f"(+/- s-grid bound {report['quantization_bound']:.4f}), T={est.horizon}")
    return 0


# ---------------------------------------------------------------------------
# oracle / write-config
# ---------------------------------------------------------------------------

def cmd_oracle(args) -> int:
    results = exact.verification_suite(seed=args.seed)
    ok = True
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        ok = ok and passed
    return 0 if ok else 1


def cmd_write_config(args) -> int:
    stormwater.write_example_config(args.path, reduced=args.reduced)
    print(f"wrote two-tank config to {args.path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvarsafe", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="run the dual-variable value iterations")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None, help=f"run directory (default ${OUT_ENV}/<config stem>)")
    sp.add_argument("--s-grid", default=None, help="lo:hi:n (default 0:cost_bound:21)")
    sp.add_argument("--tol", type=float, default=None)
    sp.add_argument("--max-iter", type=int, default=5000)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--shift", type=float, default=0.0,
                    help="add this to the stage cost before solving; outputs are un-shifted")
    sp.set_defaults(fn=cmd_solve)

    sp = sub.add_parser("safesets", help="risk values and safe-set masks from a run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--alpha", type=float, action="append")
    sp.add_argument("--r", type=float, action="append")
    sp.set_defaults(fn=cmd_safesets)

    sp = sub.add_parser("policy", help="synthesize and persist a precommitment policy")
    sp.add_argument("--run", required=True)
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--x0", required=True, help="comma-separated initial state")
    sp.add_argument("--name", default=None)
    sp.add_argument("--csv", action="store_true", help="also export the selector as CSV")
    sp.set_defaults(fn=cmd_policy)

    sp = sub.add_parser("simulate", help="Monte Carlo check of a synthesized policy")
    sp.add_argument("--run", required=True)
    sp.add_argument("--alpha", type=float, required=True)
    sp.add_argument("--x0", required=True)
    sp.add_argument("--n", type=int, default=20000)
    sp.add_argument("--T", type=int, default=None, help="fixed horizon (default adaptive)")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("oracle", help="run the finite-MDP verification suite")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_oracle)

    sp = sub.add_parser("export", help="CSV and contour dumps from a run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--alpha", type=float, action="append")
    sp.add_argument("--r", type=float, action="append")
    sp.set_defaults(fn=cmd_export)

    sp = sub.add_parser("write-config", help="write the two-tank example config")
    sp.add_argument("path")
    sp.add_argument("--reduced", action="store_true")
    sp.set_defaults(fn=cmd_write_config)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ModelValidationError, DomainError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 3
    except ArtifactError as exc:
        print(f"artifact error: {exc}", file=sys.stderr)
        return 4
    except InternalConsistencyError as exc:
        print(f"internal consistency error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
