"""Integration of the semi-discrete evolution system in the variation time.

The packed state is ``[x (row-major by node), u (row-major by node), tf]``,
the last entry only for free-final-time problems.  Time stepping uses the
Dormand-Prince 5(4) pair with a PI step-size controller; fixed-step RK4 is
available for debugging.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .diagnostics import DiagnosticsRecord, LyapunovConstants, finalize_records, make_record
from .evolution import EvolutionGains, assemble_rhs, evaluate
from .grid import Grid, GridField
from .problem import OcpProblem

log = logging.getLogger(__name__)

DEFAULT_SNAPSHOTS = (0.0, 1.0, 3.0, 10.0, 30.0, 100.0, 300.0)

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# difference between the 5th and embedded 4th order weights
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


class IntegrationAbort(RuntimeError):
    def __init__(self, reason: str, tau: float, detail: str = ""):
        super().__init__(f"{reason} at tau = {tau:.6g}" + (f": {detail}" if detail else ""))
        self.reason = reason
        self.tau = tau
        self.detail = detail


class TerminalTimeCollapse(RuntimeError):
    pass


@dataclass
class IntegratorConfig:
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    tau_max: float = 300.0
    initial_step: float | None = None
    max_step: float = math.inf
    snapshot_times: Sequence[float] = DEFAULT_SNAPSHOTS
    eps_feas: float = 1e-3
    eps_opt: float = 1e-3
    min_tf_gap: float | None = None
    method: str = "dopri54"
    fixed_step: float = 0.05
    stop_on_convergence: bool = True
    max_steps: int = 200_000

    def violations(self) -> list[str]:
        out = []
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            out.append("tolerances must be positive")
        if not self.tau_max > 0:
            out.append("tau_max must be positive")
        if self.method not in ("dopri54", "rk4"):
            out.append(f"unknown method {self.method!r}")
        if self.method == "rk4" and not self.fixed_step > 0:
            out.append("fixed_step must be positive")
        snaps = list(self.snapshot_times)
        if snaps != sorted(snaps):
            out.append("snapshot times must be sorted ascending")
        if snaps and snaps[0] < 0:
            out.append("snapshot times must be nonnegative")
        if not (self.eps_feas > 0 and self.eps_opt > 0):
            out.append("stop thresholds must be positive")
        return out


@dataclass
class EvolutionRun:
    snapshots: list
    records: list
    termination_reason: str
    message: str = ""
    constants: LyapunovConstants | None = None
    final_field: GridField | None = None
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    packed_size: int = 0
    step_taus: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.termination_reason == "converged"


# --------------------------------------------------------------------------
# packing


def packed_size(problem: OcpProblem, N: int) -> int:
    return N * problem.n + N * problem.m + (1 if problem.free_tf else 0)


def pack(field_: GridField, free_tf: bool) -> np.ndarray:
    parts = [field_.x.ravel(), field_.u.ravel()]
    if free_tf:
        parts.append([field_.tf])
    return np.concatenate(parts)


def unpack(y: np.ndarray, problem: OcpProblem, grid: Grid) -> GridField:
    N, n, m = grid.N, problem.n, problem.m
    y = np.asarray(y, dtype=float)
    if y.shape != (packed_size(problem, N),):
        raise ValueError(f"packed vector has length {y.size}, expected {packed_size(problem, N)}")
    x = y[: N * n].reshape(N, n)
    u = y[N * n: N * (n + m)].reshape(N, m)
    if problem.free_tf:
        grid = grid.with_tf(float(y[-1]))
    return GridField(grid, x, u)


def pack_rhs(rhs, free_tf: bool) -> np.ndarray:
    parts = [rhs.dx_dtau.ravel(), rhs.du_dtau.ravel()]
    if free_tf:
        parts.append([rhs.dtf_dtau])
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# generic stepping


def _initial_step(fun, t0, y0, f0, rtol, atol, order=5):
    """Starting step from the Hairer-Norsett-Wanner heuristic."""
    scale = atol + np.abs(y0) * rtol
    d0 = np.max(np.abs(y0) / scale)
    d1 = np.max(np.abs(f0) / scale)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = fun(t0 + h0, y1)
    d2 = np.max(np.abs(f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (order + 1))
    return min(100 * h0, h1)


@dataclass
class StepStats:
    n_steps: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    taus: list = field(default_factory=list)


def dopri54(fun: Callable, y0: np.ndarray, tau_end: float, *, rtol: float, atol: float,
            on_accept: Callable[[float, np.ndarray], bool], stops: Sequence[float] = (),
            initial_step: float | None = None, max_step: float = math.inf,
            max_steps: int = 200_000, stats: StepStats | None = None):
    """Adaptive Dormand-Prince integration from ``tau = 0``.

    ``on_accept(tau, y)`` runs after each accepted step and may return True
    to stop.  Steps are shortened to land exactly on each value in ``stops``.
    Returns ``(tau, y)`` at the end.
    """
    stats = stats if stats is not None else StepStats()
    beta, expo1, safe = 0.04, 0.2 - 0.04 * 0.75, 0.9
    fac_min, fac_max = 0.2, 10.0
    tau = 0.0
    y = np.asarray(y0, dtype=float).copy()
    k1 = fun(tau, y)
    stats.n_rhs += 1
    h = initial_step if initial_step else _initial_step(fun, tau, y, k1, rtol, atol)
    if not initial_step:
        stats.n_rhs += 1
    h = min(h, max_step, tau_end)
    err_old = 1e-4
    pending = sorted(s for s in stops if 0 < s < tau_end) + [tau_end]
    rejected_last = False
    K = np.empty((7, y.size))
    while tau < tau_end:
        if stats.n_steps >= max_steps:
            raise IntegrationAbort("step limit reached", tau)
        target = pending[0]
        h_try = min(h, max_step)
        clipped = False
        if tau + h_try >= target * (1 - 1e-12) or target - (tau + h_try) < 1e-10 * max(1.0, target):
            h_try = target - tau
            clipped = True
        if h_try <= 16 * np.finfo(float).eps * max(1.0, abs(tau)):
            raise IntegrationAbort("step size underflow", tau, f"h = {h_try:.3g}")
        K[0] = k1
        for s in range(1, 6):
            ys = y + h_try * (np.asarray(_A[s]) @ K[:s])
            K[s] = fun(tau + _C[s] * h_try, ys)
        y_new = y + h_try * (_B[:6] @ K[:6])
        t_new = target if clipped else tau + h_try
        K[6] = fun(t_new, y_new)
        stats.n_rhs += 6
        err_vec = h_try * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = float(np.max(np.abs(err_vec) / scale))
        if not np.isfinite(err):
            raise IntegrationAbort("non-finite error estimate", tau)
        fac11 = err ** expo1 if err > 0 else 0.0
        if err <= 1.0:
            fac = fac11 / err_old ** beta
            fac = min(1 / fac_min, max(1 / fac_max, fac / safe))
            h_new = h_try / fac if fac > 0 else h_try * fac_max
            if rejected_last:
                h_new = min(h_new, h_try)
            err_old = max(err, 1e-4)
            tau, y, k1 = t_new, y_new, K[6].copy()
            stats.n_steps += 1
            stats.taus.append(tau)
            rejected_last = False
            # a step cut short by a stop keeps the longer proposal
            h = max(h_new, h) if clipped else h_new
            if clipped:
                pending.pop(0)
            if on_accept(tau, y):
                break
        else:
            stats.n_rejected += 1
            rejected_last = True
            h = h_try / min(1 / fac_min, fac11 / safe)
    return tau, y


def rk4_fixed(fun: Callable, y0: np.ndarray, tau_end: float, *, step: float,
              on_accept: Callable[[float, np.ndarray], bool], stops: Sequence[float] = (),
              stats: StepStats | None = None, **_ignored):
    """Classical RK4 with constant step (shortened to hit ``stops``)."""
    stats = stats if stats is not None else StepStats()
    tau = 0.0
    y = np.asarray(y0, dtype=float).copy()
    pending = sorted(s for s in stops if 0 < s < tau_end) + [tau_end]
    while tau < tau_end:
        target = pending[0]
        h = min(step, target - tau)
        k1 = fun(tau, y)
        k2 = fun(tau + h / 2, y + h / 2 * k1)
        k3 = fun(tau + h / 2, y + h / 2 * k2)
        k4 = fun(tau + h, y + h * k3)
        stats.n_rhs += 4
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        tau = target if target - (tau + h) < 1e-12 * max(1.0, target) else tau + h
        if tau == target:
            pending.pop(0)
        stats.n_steps += 1
        stats.taus.append(tau)
        if on_accept(tau, y):
            break
    return tau, y


# --------------------------------------------------------------------------
# evolution driver


class _EvolutionSystem:
    """Packed-state RHS that remembers its last evaluation for diagnostics."""

    def __init__(self, problem, grid, gains, transport, error_terms, min_tf_gap):
        self.problem = problem
        self.grid = grid
        self.gains = gains
        self.transport = transport
        self.error_terms = error_terms
        self.min_tf_gap = min_tf_gap
        self.last_y = None
        self.last_ev = None

    def field(self, y):
        return unpack(y, self.problem, self.grid)

    def evaluation(self, y):
        if self.last_y is not None and np.array_equal(y, self.last_y):
            return self.last_ev
        p = self.problem
        if p.free_tf and not y[-1] - p.t0 >= self.min_tf_gap:
            raise TerminalTimeCollapse(f"terminal-time collapse: tf - t0 = {y[-1] - p.t0:.6g}")
        ev = evaluate(p, self.field(y))
        assemble_rhs(ev, self.gains, self.transport, self.error_terms)
        self.last_y = np.array(y, copy=True)
        self.last_ev = ev
        return ev

    def __call__(self, tau, y):
        return pack_rhs(self.evaluation(y).rhs, self.problem.free_tf)


def is_converged(rec: DiagnosticsRecord, config: IntegratorConfig, free_tf: bool) -> bool:
    return (rec.ef_norm <= config.eps_feas and rec.ex0_norm <= config.eps_feas
            and rec.pu_norm <= config.eps_opt
            and (not free_tf or abs(rec.transversality_residual) <= config.eps_opt))


def integrate_tau(problem: OcpProblem, initial_field: GridField, gains: EvolutionGains,
                  config: IntegratorConfig | None = None, *, transport: bool = True,
                  error_terms: bool = True) -> EvolutionRun:
    """Evolve ``initial_field`` in the variation time until convergence or ``tau_max``.

    Diagnostics are recorded at ``tau = 0`` and after every accepted step;
    full fields are kept at the configured snapshot times (and at the end).
    Aborts are reported through ``termination_reason == "error"`` rather than
    raised, so the partial run is still available.
    """
    config = config or IntegratorConfig()
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    gains.check(problem)
    grid0 = initial_field.grid
    if initial_field.x.shape[1] != problem.n or initial_field.u.shape[1] != problem.m:
        raise ValueError("initial field dimensions do not match the problem")
    gap = config.min_tf_gap
    if gap is None:
        gap = 1e-3 * (initial_field.tf - problem.t0)
    system = _EvolutionSystem(problem, grid0, gains, transport, error_terms, gap)
    free = problem.free_tf

    y0 = pack(initial_field, free)
    snaps_wanted = [float(s) for s in config.snapshot_times]
    snapshots = []
    records = []
    state = {"converged": False}

    def keep_snapshot(tau, fld):
        if any(abs(tau - s) <= 1e-9 * max(1.0, s) for s in snaps_wanted):
            if not snapshots or snapshots[-1][0] != tau:
                snapshots.append((tau, fld))

    def on_accept(tau, y):
        ev = system.evaluation(y)
        rec = make_record(tau, ev)
        records.append(rec)
        keep_snapshot(tau, ev.field)
        state["accepted"] = (tau, ev.field)
        if config.stop_on_convergence and is_converged(rec, config, free):
            state["converged"] = True
            return True
        return False

    stats = StepStats()
    reason, message = "tau_max", ""
    try:
        ev0 = system.evaluation(y0)
        records.append(make_record(0.0, ev0))
        keep_snapshot(0.0, ev0.field)
        state["accepted"] = (0.0, ev0.field)
        if config.stop_on_convergence and is_converged(records[0], config, free):
            state["converged"] = True
            tau, y = 0.0, y0
        elif config.method == "rk4":
            tau, y = rk4_fixed(system, y0, config.tau_max, step=config.fixed_step,
                               on_accept=on_accept, stops=snaps_wanted, stats=stats)
        else:
            tau, y = dopri54(system, y0, config.tau_max, rtol=config.rel_tol, atol=config.abs_tol,
                             on_accept=on_accept, stops=snaps_wanted, initial_step=config.initial_step,
                             max_step=config.max_step, max_steps=config.max_steps, stats=stats)
        if state["converged"]:
            reason = "converged"
    except TerminalTimeCollapse as exc:
        reason, message = "error", str(exc)
    except IntegrationAbort as exc:
        reason, message = "error", str(exc)
    except FloatingPointError as exc:
        tau_bad = records[-1].tau if records else 0.0
        reason, message = "error", f"non-finite right-hand side after tau = {tau_bad:.6g}: {exc}"
    if reason == "error":
        log.warning("evolution aborted: %s", message)

    last = state.get("accepted")
    if last is not None and (not snapshots or snapshots[-1][0] != last[0]):
        snapshots.append(last)
    constants = None
    if records:
        constants, records = finalize_records(records, gains, problem.t0)
    return EvolutionRun(
        snapshots=snapshots, records=records, termination_reason=reason, message=message,
        constants=constants, final_field=snapshots[-1][1] if snapshots else None,
        n_steps=stats.n_steps, n_rejected=stats.n_rejected, n_rhs=stats.n_rhs,
        packed_size=packed_size(problem, grid0.N), step_taus=list(stats.taus),
    )


# --------------------------------------------------------------------------
# calculus-of-variations flow


@dataclass
class CovRecord:
    tau: float
    J: float
    residual_norm: float


@dataclass
class CovRun:
    snapshots: list
    records: list
    termination_reason: str
    message: str = ""
    n_steps: int = 0
    n_rejected: int = 0


def integrate_cov(problem, y_init, grid: Grid, K=1.0, config: IntegratorConfig | None = None) -> CovRun:
    """Evolve a pinned-end curve along the gradient flow of its functional.

    The run stops when the largest interior right-hand side entry (divided
    by the gain) drops below ``eps_opt``, or at ``tau_max``.
    """
    from .evolution import cov_functional, cov_rhs

    config = config or IntegratorConfig()
    bad = config.violations()
    if bad:
        raise ValueError("; ".join(bad))
    y0 = np.asarray(y_init, dtype=float)
    if y0.ndim == 1:
        y0 = y0[:, None]
    if y0.shape != (grid.N, problem.k):
        raise ValueError(f"initial curve has shape {y0.shape}, expected {(grid.N, problem.k)}")
    if not (np.allclose(y0[0], problem.y0) and np.allclose(y0[-1], problem.yf)):
        raise ValueError("initial curve must satisfy the boundary values")
    shape = y0.shape
    gain = float(np.max(np.abs(np.atleast_1d(K))))

    def fun(tau, y):
        return cov_rhs(problem, y.reshape(shape), grid, K).ravel()

    snaps_wanted = [float(s) for s in config.snapshot_times]
    snapshots, records = [], []

    def record(tau, y):
        yy = y.reshape(shape).copy()
        res = float(np.max(np.abs(fun(tau, y)))) / gain
        records.append(CovRecord(float(tau), cov_functional(problem, yy, grid), res))
        last[:] = [(float(tau), yy)]
        if any(abs(tau - s) <= 1e-9 * max(1.0, s) for s in snaps_wanted):
            snapshots.append((float(tau), yy))
        return config.stop_on_convergence and res <= config.eps_opt

    last: list = []
    stats = StepStats()
    reason, message = "tau_max", ""
    done = record(0.0, y0.ravel())
    try:
        if not done:
            if config.method == "rk4":
                rk4_fixed(fun, y0.ravel(), config.tau_max, step=config.fixed_step,
                          on_accept=record, stops=snaps_wanted, stats=stats)
            else:
                dopri54(fun, y0.ravel(), config.tau_max, rtol=config.rel_tol, atol=config.abs_tol,
                        on_accept=record, stops=snaps_wanted, initial_step=config.initial_step,
                        max_step=config.max_step, max_steps=config.max_steps, stats=stats)
            done = config.stop_on_convergence and records[-1].residual_norm <= config.eps_opt
        if done:
            reason = "converged"
    except (IntegrationAbort, FloatingPointError) as exc:
        reason, message = "error", str(exc)
    if last and (not snapshots or snapshots[-1][0] != last[0][0]):
        snapshots.append(last[0])
    return CovRun(snapshots, records, reason, message, stats.n_steps, stats.n_rejected)
