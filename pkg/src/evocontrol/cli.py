"""Command-line front end.

``evocontrol run example1`` evolves the built-in linear-quadratic problem
with its default gains and writes plot-ready CSV/JSON files into the output
directory.  Settings come from, in increasing priority, the problem
defaults, an optional ``key = value`` config file, and command-line flags.
"""

from __future__ import annotations

import argparse
import ast
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import models
from .diagnostics import riccati_oracle
from .evolution import EvolutionGains, _as_matrix, feasible_initialize, gain_violations
from .grid import Grid, GridField, unscale_field
from .integrator import (
    DEFAULT_SNAPSHOTS,
    IntegratorConfig,
    integrate_cov,
    integrate_tau,
    packed_size,
)
from .problem import ScalingSpec

log = logging.getLogger(__name__)

PROBLEMS = ("example1", "example2", "cov-demo")
MODES = ("arbitrary", "feasible-start")


@dataclass
class RunConfig:
    """Everything one run needs.  ``None`` entries take the problem default.

    Gains are scalars (times identity) or nested lists of rows.  For
    ``example2`` the initial state and target heading are given in degrees.
    """

    problem: str = "example1"
    N: int | None = None
    K: object = None
    K_f: object = None
    K_x0: object = None
    k_tf: float | None = None
    tf_guess: float | None = None
    x0: object = None
    theta_target_deg: float | None = None
    rel_tol: float | None = None
    abs_tol: float | None = None
    tau_max: float = 300.0
    snapshot_times: object = None
    transport: bool = True
    mode: str = "arbitrary"
    method: str = "dopri54"
    eps_feas: float = 1e-3
    eps_opt: float = 1e-3
    stop_on_convergence: bool = True
    state_scales: object = None
    control_scales: object = None
    time_scale: float | None = None
    out: str = "out"


_DEFAULTS = {
    "example1": dict(N=61, K=2e-2, K_f=0.1, K_x0=0.1, k_tf=0.0, rel_tol=1e-3, abs_tol=1e-6),
    "example2": dict(N=51, K=2e-6, K_f=0.1, K_x0=0.1, k_tf=2e-4, rel_tol=1e-3, abs_tol=1e-6,
                     tf_guess=models.MISSILE_TF_GUESS, x0=[10000.0, 5000.0, 0.0],
                     theta_target_deg=30.0,
                     state_scales=models.MISSILE_SCALING.state_scales.tolist(),
                     control_scales=models.MISSILE_SCALING.control_scales.tolist(),
                     time_scale=models.MISSILE_SCALING.time_scale),
    # the Dirichlet flow is stiff; see README for why its tolerances are tighter
    "cov-demo": dict(N=41, K=1.0, rel_tol=1e-6, abs_tol=1e-9),
}


def resolve(config: RunConfig) -> RunConfig:
    """Fill ``None`` fields with the selected problem's defaults."""
    defaults = _DEFAULTS.get(config.problem, {})
    updates = {k: v for k, v in defaults.items() if getattr(config, k) is None}
    out = replace(config, **updates)
    if out.snapshot_times is None:
        out = replace(out, snapshot_times=[s for s in DEFAULT_SNAPSHOTS if s <= out.tau_max])
    return out


# --------------------------------------------------------------------------
# config files


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Values are Python literals (numbers, lists, booleans); anything else is
    kept as a bare string, so ``problem = example1`` works unquoted.
    """
    out = {}
    names = {f.name for f in fields(RunConfig)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in names:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            lowered = value.lower()
            out[key] = {"true": True, "false": False, "on": True, "off": False}.get(lowered, value)
    return out


def load_config(path) -> dict:
    return parse_config_text(Path(path).read_text())


# --------------------------------------------------------------------------
# validation and assembly


def _float_list(value, label, violations, length=None):
    try:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
    except (TypeError, ValueError):
        violations.append(f"{label} must be numeric")
        return None
    if arr.ndim != 1 or (length is not None and arr.size != length):
        violations.append(f"{label} must be a list of {length} numbers")
        return None
    return arr


def validate(config: RunConfig) -> list[str]:
    """Every reason ``config`` cannot run; empty when it is runnable."""
    out = []
    if config.problem not in PROBLEMS:
        return [f"problem must be one of {', '.join(PROBLEMS)}, got {config.problem!r}"]
    c = resolve(config)
    if not isinstance(c.N, (int, np.integer)) or isinstance(c.N, bool) or c.N < 3:
        out.append(f"N >= 3 required, got {c.N!r}")
    if c.mode not in MODES:
        out.append(f"mode must be one of {', '.join(MODES)}")
    if not (isinstance(c.tau_max, (int, float)) and c.tau_max > 0 and math.isfinite(c.tau_max)):
        out.append("tau_max must be a positive number")
    snaps = _float_list(c.snapshot_times, "snapshot_times", out)
    if snaps is not None and snaps.size:
        if np.any(np.diff(snaps) < 0):
            out.append("snapshot_times must be sorted ascending")
        if snaps[0] < 0 or (isinstance(c.tau_max, (int, float)) and snaps[-1] > c.tau_max):
            out.append("snapshot_times must lie within [0, tau_max]")
    icfg = IntegratorConfig(rel_tol=c.rel_tol, abs_tol=c.abs_tol, tau_max=max(float(c.tau_max), 1e-300),
                            eps_feas=c.eps_feas, eps_opt=c.eps_opt, method=c.method)
    out += [v for v in icfg.violations() if "tau_max" not in v]

    if c.problem == "cov-demo":
        try:
            out += gain_violations(_as_matrix(c.K, 1, "K"), np.eye(1), np.eye(1), 0.0, False)
        except (TypeError, ValueError) as exc:
            out.append(str(exc))
        return out

    n, m = (2, 1) if c.problem == "example1" else (3, 1)
    free = c.problem == "example2"
    try:
        mats = [_as_matrix(c.K, m, "K"), _as_matrix(c.K_f, n, "K_f"), _as_matrix(c.K_x0, n, "K_x0")]
        k_tf = float(c.k_tf)
        out += gain_violations(*mats, k_tf, free)
    except (TypeError, ValueError) as exc:
        out.append(str(exc))
    if c.x0 is not None:
        _float_list(c.x0, "x0", out, n)
    if free:
        if not (c.tf_guess is not None and c.tf_guess > 0):
            out.append("tf_guess must be positive")
        for label, val, size in (("state_scales", c.state_scales, n), ("control_scales", c.control_scales, m)):
            arr = _float_list(val, label, out, size)
            if arr is not None and not np.all(arr > 0):
                out.append(f"{label} must be positive")
        if not (c.time_scale is not None and c.time_scale > 0):
            out.append("time_scale must be positive")
    return out


def build_problem(c: RunConfig):
    """Problem in solver units, and the scaling used (None if unscaled)."""
    if c.problem == "example1":
        p = models.example1()
        if c.x0 is not None:
            p = models.linear_quadratic(models.LQ_A, models.LQ_B, models.LQ_Q, models.LQ_R,
                                        models.LQ_F, c.x0, models.LQ_T0, models.LQ_TF, name="example1")
        return p, None
    x0 = np.asarray(c.x0, dtype=float).copy()
    x0[2] = np.deg2rad(x0[2])
    spec = ScalingSpec(np.asarray(c.state_scales, dtype=float), np.asarray(c.control_scales, dtype=float),
                       float(c.time_scale))
    p = models.example2(spec, x0=x0, theta_target=np.deg2rad(c.theta_target_deg), tf_guess=c.tf_guess)
    return p, spec


def _initial_field(problem, c: RunConfig) -> GridField:
    grid = Grid(int(c.N), problem.t0, problem.tf)
    if c.mode == "feasible-start":
        return feasible_initialize(problem, np.zeros((grid.N, problem.m)), grid)
    return GridField(grid, np.zeros((grid.N, problem.n)), np.zeros((grid.N, problem.m)))


def _integrator_config(c: RunConfig) -> IntegratorConfig:
    return IntegratorConfig(
        rel_tol=c.rel_tol, abs_tol=c.abs_tol, tau_max=float(c.tau_max),
        snapshot_times=tuple(float(s) for s in c.snapshot_times), eps_feas=c.eps_feas,
        eps_opt=c.eps_opt, method=c.method, stop_on_convergence=c.stop_on_convergence,
    )


# --------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    return format(float(v), ".17g")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([r if isinstance(r, str) else (str(r) if isinstance(r, (int, np.integer)) else _fmt(r))
                        for r in row])


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def _write_summary(path: Path, summary: dict):
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


def _run_ocp(c: RunConfig, outdir: Path) -> tuple[int, dict]:
    problem, spec = build_problem(c)
    gains = EvolutionGains.build(problem.n, problem.m, c.K, c.K_f, c.K_x0, c.k_tf)
    field0 = _initial_field(problem, c)
    run = integrate_tau(problem, field0, gains, _integrator_config(c), transport=c.transport)

    def physical(f):
        return f if spec is None else unscale_field(f, spec)

    n, m = problem.n, problem.m
    rows = []
    for tau, f in run.snapshots:
        pf = physical(f)
        for i in range(pf.grid.N):
            rows.append([tau, i, pf.t[i], *pf.x[i], *pf.u[i]])
    _write_csv(outdir / "snapshots.csv",
               ["tau", "node", "t"] + [f"x{k + 1}" for k in range(n)] + [f"u{k + 1}" for k in range(m)], rows)
    ts = 1.0 if spec is None else spec.time_scale
    _write_csv(outdir / "diagnostics.csv",
               ["tau", "J", "ef_norm", "ex0_norm", "pu_norm", "transversality", "tf", "V"],
               [[r.tau, r.J, r.ef_norm, r.ex0_norm, r.pu_norm, r.transversality_residual, r.tf * ts, r.V]
                for r in run.records])

    last = run.records[-1] if run.records else None
    summary = {
        "problem": c.problem,
        "N": int(c.N),
        "packed_states": packed_size(problem, int(c.N)),
        "mode": c.mode,
        "transport": c.transport,
        "termination_reason": run.termination_reason,
        "message": run.message,
        "n_steps": run.n_steps,
        "n_rejected": run.n_rejected,
        "n_rhs": run.n_rhs,
    }
    if last is not None:
        summary["final"] = {
            "tau": last.tau, "J": last.J, "ef_norm": last.ef_norm, "ex0_norm": last.ex0_norm,
            "pu_norm": last.pu_norm, "transversality": last.transversality_residual,
            "tf": last.tf * ts, "V": last.V,
        }
    if run.constants is not None:
        k = run.constants
        summary["constants"] = {"c1": k.c1, "c2": k.c2, "d1": k.d1, "d2": k.d2}
    if c.problem == "example1" and run.final_field is not None:
        grid = run.final_field.grid
        oracle = riccati_oracle(models.LQ_A, models.LQ_B, models.LQ_Q, models.LQ_R, models.LQ_F,
                                problem.x0, problem.t0, problem.tf, grid)
        _write_csv(outdir / "oracle.csv", ["node", "t", "x1", "x2", "u1"],
                   [[i, oracle.t[i], *oracle.x[i], *oracle.u[i]] for i in range(grid.N)])
        summary["oracle"] = {
            "J": oracle.J,
            "max_x_error": float(np.max(np.abs(run.final_field.x - oracle.x))),
            "max_u_error": float(np.max(np.abs(run.final_field.u - oracle.u))),
        }
    return (1 if run.termination_reason == "error" else 0), summary


def _run_cov(c: RunConfig, outdir: Path) -> tuple[int, dict]:
    problem = models.dirichlet_energy()
    grid = Grid(int(c.N), problem.t0, problem.tf)
    s = (grid.t - grid.t0) / (grid.tf - grid.t0)
    y_init = problem.y0 + (problem.yf - problem.y0) * (s ** 2)[:, None]
    run = integrate_cov(problem, y_init, grid, c.K, _integrator_config(c))
    rows = []
    for tau, y in run.snapshots:
        for i in range(grid.N):
            rows.append([tau, i, grid.t[i], *y[i]])
    _write_csv(outdir / "snapshots.csv", ["tau", "node", "t"] + [f"y{k + 1}" for k in range(problem.k)], rows)
    _write_csv(outdir / "diagnostics.csv", ["tau", "J", "residual_norm"],
               [[r.tau, r.J, r.residual_norm] for r in run.records])
    final = run.snapshots[-1][1]
    line = problem.y0 + (problem.yf - problem.y0) * s[:, None]
    summary = {
        "problem": c.problem, "N": int(c.N), "termination_reason": run.termination_reason,
        "message": run.message, "n_steps": run.n_steps, "n_rejected": run.n_rejected,
        "final": {"tau": run.records[-1].tau, "J": run.records[-1].J,
                  "residual_norm": run.records[-1].residual_norm,
                  "max_node_error": float(np.max(np.abs(final - line)))},
    }
    return (1 if run.termination_reason == "error" else 0), summary


def run(config: RunConfig) -> int:
    """Execute one configuration; returns the process exit status."""
    bad = validate(config)
    if bad:
        for v in bad:
            print(f"invalid config: {v}", file=sys.stderr)
        return 2
    c = resolve(config)
    outdir = Path(c.out)
    outdir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    status, summary = (_run_cov if c.problem == "cov-demo" else _run_ocp)(c, outdir)
    summary["wall_time_s"] = time.perf_counter() - start
    summary["config"] = {k: v for k, v in asdict(c).items() if k != "out"}
    _write_summary(outdir / "summary.json", summary)
    print(f"{c.problem}: {summary['termination_reason']} at tau = {summary['final']['tau']:.6g}"
          f" ({summary['wall_time_s']:.1f} s), outputs in {outdir}")
    if summary.get("message"):
        print(summary["message"], file=sys.stderr)
    return status


# --------------------------------------------------------------------------
# argument parsing


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("problem_pos", nargs="?", metavar="PROBLEM", choices=PROBLEMS,
                   help="example1, example2 or cov-demo")
    p.add_argument("--problem", choices=PROBLEMS)
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", help="output directory (default: out)")
    p.add_argument("--n", type=int, dest="N", help="number of grid nodes")
    p.add_argument("--tau-max", type=float)
    p.add_argument("--transport", choices=("on", "off"))
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--rel-tol", type=float)
    p.add_argument("--abs-tol", type=float)


def config_from_args(args) -> RunConfig:
    values = load_config(args.config) if getattr(args, "config", None) else {}
    problem = args.problem or args.problem_pos
    if problem:
        values["problem"] = problem
    for key in ("out", "N", "tau_max", "mode", "rel_tol", "abs_tol"):
        val = getattr(args, key, None)
        if val is not None:
            values[key] = val
    if getattr(args, "transport", None):
        values["transport"] = args.transport == "on"
    return RunConfig(**values)


def _sweep_one(path: str) -> tuple[str, int]:
    cfg = RunConfig(**load_config(path))
    if cfg.out == RunConfig.out:
        cfg = replace(cfg, out=str(Path("out") / Path(path).stem))
    return path, run(cfg)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="evocontrol", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one problem")
    _add_run_flags(p_run)
    p_val = sub.add_parser("validate", help="check a configuration without running it")
    _add_run_flags(p_val)
    p_sweep = sub.add_parser("sweep", help="run several config files, each into its own directory")
    p_sweep.add_argument("configs", nargs="+")
    p_sweep.add_argument("--jobs", type=int, default=1)
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.command == "sweep":
        with ProcessPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            results = list(pool.map(_sweep_one, args.configs))
        for path, status in results:
            print(f"{path}: exit {status}")
        return max(status for _, status in results)

    try:
        config = config_from_args(args)
    except (OSError, ValueError, TypeError) as exc:
        parser.error(str(exc))
    if args.command == "validate":
        bad = validate(config)
        for v in bad:
            print(v)
        if not bad:
            print("ok")
        return 1 if bad else 0
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
