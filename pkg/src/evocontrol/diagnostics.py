"""Performance index, optimality residuals, Lyapunov functional and oracles.

The Lyapunov functional combines the feasibility errors with the cost,

    V = |e_x0| + int |e_f| dt + c1 J + c2/2 |e_f(tf)|^2,

and is only monitored, never fed back into the solver.  The Riccati sweep
and the adjoint integration are independent reference solutions used to
check the solver.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .evolution import EvolutionGains, Evaluation, dynamics_error, evaluate, initial_error
from .grid import Grid, GridField
from .problem import OcpProblem
from .transition import TransitionTable

BOUND_MARGIN = 1.5
BOUND_FLOOR = 1e-6


@dataclass(frozen=True)
class DiagnosticsRecord:
    tau: float
    J: float
    ef_norm: float
    ex0_norm: float
    pu_norm: float
    transversality_residual: float
    tf: float
    V: float = float("nan")
    dV_estimate: float = float("nan")
    # pieces of V, kept so V can be recomputed once the constants are final
    ex0_l2: float = 0.0
    ef_l2_integral: float = 0.0
    ef_tf_sq: float = 0.0
    pf_max: float = 0.0
    px0_max: float = 0.0


@dataclass(frozen=True)
class LyapunovConstants:
    c1: float
    c2: float
    d1: float
    d2: float
    eig_K_f: tuple
    eig_K_x0: tuple
    horizon: float
    k_tf: float


def performance_index(problem: OcpProblem, field: GridField) -> float:
    """Terminal cost plus trapezoid sum of the running cost."""
    run = np.atleast_1d(problem.L(field.x, field.u, field.t))
    term = problem.phi(field.x[-1], field.tf)
    J = float(term) + field.grid.h * float(np.sum(run) - 0.5 * (run[0] + run[-1]))
    if not np.isfinite(J):
        raise FloatingPointError("performance index is non-finite")
    return J


def optimality_residuals(problem: OcpProblem, field: GridField, table: TransitionTable | None = None):
    """``(max |pbar_u|, transversality)``; the latter is ``L + phi_t + phi_x' xdot`` at ``tf``."""
    ev = evaluate(problem, field, table)
    return float(np.max(np.abs(ev.pbar_u))), ev.transversality


def estimate_bounds(problem: OcpProblem, field: GridField, table: TransitionTable | None = None,
                    ev: Evaluation | None = None, margin: float = BOUND_MARGIN):
    """Inflated maxima of ``|p_f|`` and ``|p_x0|`` over the nodes."""
    if ev is None:
        ev = evaluate(problem, field, table)
    d1 = margin * float(np.max(np.linalg.norm(ev.p_f, axis=1)))
    d2 = margin * float(np.max(np.linalg.norm(ev.p_x0, axis=1)))
    return d1, d2


def select_lyapunov_constants(gains: EvolutionGains, horizon: float, d1: float, d2: float,
                              floor: float = BOUND_FLOOR) -> LyapunovConstants:
    """Half the admissible upper bound for ``c1``; twice the lower bound for ``c2``.

    Bounds below ``floor`` are raised to it.  With ``k_tf = 0`` any positive
    ``c2`` is admissible and 1 is used.
    """
    ef = np.linalg.eigvalsh(0.5 * (gains.K_f + gains.K_f.T))
    ex = np.linalg.eigvalsh(0.5 * (gains.K_x0 + gains.K_x0.T))
    if ef.min() <= 0 or ex.min() <= 0:
        raise ValueError("K_f and K_x0 must be positive-definite")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    d1 = max(float(d1), floor)
    d2 = max(float(d2), floor)
    bound = min(ex.min() / (d2 * ex.max() * horizon ** 2), ef.min() / (d1 * ef.max() * horizon))
    c1 = 0.5 * bound
    c2 = 2.0 * gains.k_tf / (2.0 * c1 * ef.min()) if gains.k_tf > 0 else 1.0
    return LyapunovConstants(c1, c2, d1, d2, tuple(ef), tuple(ex), float(horizon), gains.k_tf)


def lyapunov_parts(problem: OcpProblem, field: GridField, e_f: np.ndarray | None = None):
    """``(|e_x0|, int |e_f| dt, J, |e_f(tf)|^2)``."""
    if e_f is None:
        e_f = dynamics_error(problem, field)
    nrm = np.linalg.norm(e_f, axis=1)
    integral = field.grid.h * float(np.sum(nrm) - 0.5 * (nrm[0] + nrm[-1]))
    return (float(np.linalg.norm(initial_error(problem, field))), integral,
            performance_index(problem, field), float(nrm[-1] ** 2))


def combine_lyapunov(parts, constants: LyapunovConstants) -> float:
    ex0, ef_int, J, ef_tf_sq = parts
    return ex0 + ef_int + constants.c1 * J + 0.5 * constants.c2 * ef_tf_sq


def lyapunov_value(problem: OcpProblem, field: GridField, constants: LyapunovConstants) -> float:
    return combine_lyapunov(lyapunov_parts(problem, field), constants)


def make_record(tau: float, ev: Evaluation) -> DiagnosticsRecord:
    problem, field = ev.problem, ev.field
    ex0, ef_int, J, ef_tf_sq = lyapunov_parts(problem, field, ev.e_f)
    return DiagnosticsRecord(
        tau=float(tau), J=J,
        ef_norm=float(np.max(np.abs(ev.e_f))),
        ex0_norm=float(np.max(np.abs(ev.e_x0))),
        pu_norm=float(np.max(np.abs(ev.pbar_u))),
        transversality_residual=float(ev.transversality),
        tf=float(field.tf),
        ex0_l2=ex0, ef_l2_integral=ef_int, ef_tf_sq=ef_tf_sq,
        pf_max=float(np.max(np.linalg.norm(ev.p_f, axis=1))),
        px0_max=float(np.max(np.linalg.norm(ev.p_x0, axis=1))),
    )


def finalize_records(records, gains: EvolutionGains, t0: float, margin: float = BOUND_MARGIN,
                     floor: float = BOUND_FLOOR):
    """Constants valid along the whole run, and records with ``V`` filled in.

    ``d1``/``d2`` are the inflated running maxima of ``|p_f|``/``|p_x0|`` and
    the horizon is the largest ``tf - t0`` seen, so one set of constants
    serves every record.
    """
    d1 = margin * max(r.pf_max for r in records)
    d2 = margin * max(r.px0_max for r in records)
    horizon = max(r.tf for r in records) - t0
    const = select_lyapunov_constants(gains, horizon, d1, d2, floor)
    out = []
    prev = None
    for r in records:
        V = combine_lyapunov((r.ex0_l2, r.ef_l2_integral, r.J, r.ef_tf_sq), const)
        dV = float("nan") if prev is None else (V - prev[1]) / (r.tau - prev[0])
        out.append(replace(r, V=V, dV_estimate=dV))
        prev = (r.tau, V)
    return const, out


# --------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class RiccatiSolution:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    J: float
    S: np.ndarray


def riccati_oracle(A, B, Q, R, F, x0, t0: float, tf: float, grid: Grid | int, substeps: int = 10) -> RiccatiSolution:
    """Finite-horizon LQR by backward RK4 sweep of the Riccati equation.

    ``S`` is integrated with ``substeps`` RK4 steps per grid interval; the
    closed loop is then swept forward with steps twice as long so that the
    stored ``S`` values supply the RK4 midpoints.
    """
    A, B, Q, R, F = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, Q, R, F))
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if not isinstance(grid, Grid):
        grid = Grid(int(grid), t0, tf)
    try:
        Rinv = np.linalg.inv(R)
    except np.linalg.LinAlgError as exc:
        raise ValueError("R must be invertible") from exc
    BRB = B @ Rinv @ B.T

    def dS(S):
        return -(A.T @ S + S @ A - S @ BRB @ S + Q)

    M = substeps * (grid.N - 1)
    hs = grid.h / substeps
    S = np.empty((M + 1,) + F.shape)
    S[M] = F
    cur = F.copy()
    for k in range(M, 0, -1):
        k1 = dS(cur)
        k2 = dS(cur - 0.5 * hs * k1)
        k3 = dS(cur - 0.5 * hs * k2)
        k4 = dS(cur - hs * k3)
        cur = cur - (hs / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        cur = 0.5 * (cur + cur.T)
        S[k - 1] = cur

    def closed(k, x):
        return (A - BRB @ S[k]) @ x

    if substeps % 2:
        raise ValueError("substeps must be even")
    xs = np.empty((grid.N, x0.size))
    xs[0] = x0
    x = x0.copy()
    H = 2 * hs
    for k in range(0, M, 2):
        k1 = closed(k, x)
        k2 = closed(k + 1, x + 0.5 * H * k1)
        k3 = closed(k + 1, x + 0.5 * H * k2)
        k4 = closed(k + 2, x + H * k3)
        x = x + (H / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if (k + 2) % substeps == 0:
            xs[(k + 2) // substeps] = x
    S_nodes = S[::substeps]
    us = -np.einsum("ij,njk,nk->ni", Rinv @ B.T, S_nodes, xs)
    J = 0.5 * float(x0 @ S[0] @ x0)
    return RiccatiSolution(grid.t, xs, us, J, S_nodes)


@dataclass(frozen=True)
class AdjointSolution:
    costate: np.ndarray
    p_u: np.ndarray
    x: np.ndarray
    warning: str | None = None


def adjoint_oracle(problem: OcpProblem, field: GridField, refine: int = 10,
                   feasibility_tol: float = 1e-5) -> AdjointSolution:
    """Gradient of the cost w.r.t. node controls by backward integration.

    The state is re-integrated forward from ``x0`` with the piecewise-linear
    control of ``field`` (RK4, ``2 * refine`` steps per interval), then

        mu' = -f_x' mu - (L_x + phi_tx + phi_xx' xdot + f_x' phi_x),  mu(tf) = 0

    is swept backward with ``xdot = f``.  The costate is
    ``phi_x(x(t), t) + mu`` and ``p_u = L_u + f_u' costate``.  When the field
    is not the forward solution of its own control, a warning is attached:
    the two gradients only coincide on feasible fields.
    """
    grid = field.grid
    r2 = 2 * refine
    M = r2 * (grid.N - 1)
    d = grid.h / r2
    pos = np.arange(M + 1) / r2
    idx = np.minimum(np.floor(pos).astype(int), grid.N - 2)
    w = (pos - idx)[:, None]
    U = (1.0 - w) * field.u[idx] + w * field.u[idx + 1]
    T = grid.t0 + pos * grid.h
    # half-step controls for the forward sweep
    posh = (np.arange(M) + 0.5) / r2
    idh = np.minimum(np.floor(posh).astype(int), grid.N - 2)
    wh = (posh - idh)[:, None]
    Uh = (1.0 - wh) * field.u[idh] + wh * field.u[idh + 1]

    X = np.empty((M + 1, problem.n))
    X[0] = problem.x0
    x = problem.x0.copy()
    f = problem.f
    for k in range(M):
        t = T[k]
        k1 = f(x, U[k], t)
        k2 = f(x + 0.5 * d * k1, Uh[k], t + 0.5 * d)
        k3 = f(x + 0.5 * d * k2, Uh[k], t + 0.5 * d)
        k4 = f(x + d * k3, U[k + 1], t + d)
        x = x + (d / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        X[k + 1] = x

    fx = problem.f_x(X, U, T)
    src = (problem.L_x(X, U, T) + problem.phi_tx(X, T)
           + np.einsum("nij,ni->nj", problem.phi_xx(X, T), f(X, U, T))
           + np.einsum("nij,ni->nj", fx, problem.phi_x(X, T)))

    def rhs(k, mu):
        return -fx[k].T @ mu - src[k]

    mu = np.zeros((M + 1, problem.n))
    cur = np.zeros(problem.n)
    H = 2 * d
    for k in range(M, 0, -2):
        k1 = rhs(k, cur)
        k2 = rhs(k - 1, cur - 0.5 * H * k1)
        k3 = rhs(k - 1, cur - 0.5 * H * k2)
        k4 = rhs(k - 2, cur - H * k3)
        cur = cur - (H / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        mu[k - 2] = cur

    nodes = slice(0, M + 1, r2)
    Xn, Un, Tn = X[nodes], U[nodes], T[nodes]
    lam = problem.phi_x(Xn, Tn) + mu[nodes]
    p_u = problem.L_u(Xn, Un, Tn) + np.einsum("nij,ni->nj", problem.f_u(Xn, Un, Tn), lam)

    warning = None
    gap = float(np.max(np.abs(Xn - field.x)))
    if gap > feasibility_tol * max(1.0, float(np.max(np.abs(Xn)))):
        warning = f"field is infeasible (state mismatch {gap:.3g}); gradients need not agree"
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    return AdjointSolution(lam, p_u, Xn, warning)
