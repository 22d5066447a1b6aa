"""Right-hand sides of the semi-discrete evolution equations.

For a field ``(x_i, u_i, tf)`` on a uniform grid the evolution in the
variation time ``tau`` is

* ``du/dtau = -K pbar_u``, with the costate-free gradient
  ``pbar_u(t) = L_u + f_u' p_f(t)`` and
  ``p_f(t) = phi_x(t) + int_t^tf Phi'(s, t) g(s) ds``,
  ``g = L_x + phi_tx + phi_xx' xdot + f_x' phi_x``;
* ``dx/dtau = -Phi(t, t0) K_x0 e_x0 + int_t0^t Phi(t, s) (f_u du/dtau - K_f e_f)(s) ds``,
  which makes the dynamics error ``e_f = xdot - f`` and the initial error
  ``e_x0 = x(t0) - x0`` decay exponentially;
* ``dtf/dtau = -k_tf (L + phi_t + phi_x' xdot)`` at ``tf`` for free final time.

Terminal-cost derivatives inside ``g`` and ``p_f`` are evaluated along the
trajectory, ``phi_x(t) = phi_x(x(t), t)``; with that reading ``p_f`` is
exactly the adjoint of the problem on feasible fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridField, cumulative_trapezoid, reverse_cumulative_trapezoid, time_derivative
from .models import CovProblem
from .problem import OcpProblem
from .transition import TransitionTable, build_transition_table, pairwise_table


class NonFiniteEvaluation(FloatingPointError):
    def __init__(self, what: str, node: int):
        super().__init__(f"{what} is non-finite at node {node}")
        self.node = node


def _check_finite(arr, what):
    arr = np.asarray(arr)
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr.reshape(arr.shape[0], -1)))[0, 0]
        raise NonFiniteEvaluation(what, int(bad))
    return arr


def _as_matrix(value, dim: int, label: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(dim)
    arr = np.atleast_2d(arr)
    if arr.shape != (dim, dim):
        raise ValueError(f"{label} must be a scalar or {dim}x{dim}, got shape {arr.shape}")
    return arr


def gain_violations(K, K_f, K_x0, k_tf, free_tf: bool) -> list[str]:
    out = []
    for label, mat in (("K", K), ("K_f", K_f), ("K_x0", K_x0)):
        mat = np.asarray(mat, dtype=float)
        if not np.all(np.isfinite(mat)):
            out.append(f"{label} has non-finite entries")
            continue
        if not np.allclose(mat, mat.T, rtol=1e-12, atol=0.0):
            out.append(f"{label} must be symmetric")
            continue
        try:
            np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            out.append(f"{label} must be positive-definite")
    if not np.isfinite(k_tf) or k_tf < 0:
        out.append("k_tf must be a finite nonnegative number")
    elif free_tf and k_tf <= 0:
        out.append("k_tf must be positive for a free final time problem")
    return out


@dataclass(frozen=True, eq=False)
class EvolutionGains:
    K: np.ndarray
    K_f: np.ndarray
    K_x0: np.ndarray
    k_tf: float = 0.0

    def __post_init__(self):
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        K_f = np.atleast_2d(np.asarray(self.K_f, dtype=float))
        K_x0 = np.atleast_2d(np.asarray(self.K_x0, dtype=float))
        problems = gain_violations(K, K_f, K_x0, float(self.k_tf), free_tf=False)
        if problems:
            raise ValueError("; ".join(problems))
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "K_f", K_f)
        object.__setattr__(self, "K_x0", K_x0)
        object.__setattr__(self, "k_tf", float(self.k_tf))

    @classmethod
    def build(cls, n: int, m: int, K, K_f, K_x0, k_tf: float = 0.0) -> "EvolutionGains":
        """Accept scalars (times identity) or full matrices."""
        return cls(_as_matrix(K, m, "K"), _as_matrix(K_f, n, "K_f"), _as_matrix(K_x0, n, "K_x0"), k_tf)

    def check(self, problem: OcpProblem) -> None:
        if self.K.shape != (problem.m, problem.m) or self.K_f.shape != (problem.n, problem.n) \
                or self.K_x0.shape != (problem.n, problem.n):
            raise ValueError("gain dimensions do not match the problem")
        if problem.free_tf and self.k_tf <= 0:
            raise ValueError("k_tf must be positive for a free final time problem")


@dataclass(frozen=True, eq=False)
class RhsField:
    dx_dtau: np.ndarray
    du_dtau: np.ndarray
    dtf_dtau: float = 0.0


@dataclass(eq=False)
class Evaluation:
    """Everything computed for one field; the RHS and diagnostics read from it."""

    problem: OcpProblem
    field: GridField
    table: TransitionTable
    xdot: np.ndarray
    e_f: np.ndarray
    e_x0: np.ndarray
    p_f: np.ndarray
    p_x0: np.ndarray
    pbar_u: np.ndarray
    running_cost: np.ndarray
    transversality: float
    f_u: np.ndarray | None = None
    pairwise: np.ndarray | None = None
    rhs: RhsField | None = None


def dynamics_error(problem: OcpProblem, field: GridField) -> np.ndarray:
    xdot = time_derivative(field.x, field.grid)
    fv = _check_finite(problem.f(field.x, field.u, field.t), "dynamics f")
    return xdot - fv


def initial_error(problem: OcpProblem, field: GridField) -> np.ndarray:
    if field.x.shape[1] != problem.n:
        raise ValueError("field state dimension does not match the problem")
    return field.x[0] - problem.x0


def _forward_integral(table: TransitionTable, w: np.ndarray, h: float, pairwise=None) -> np.ndarray:
    """``I_i = int_{t0}^{t_i} Phi(t_i, s) w(s) ds`` by trapezoid."""
    if pairwise is None:
        inner = cumulative_trapezoid(np.einsum("nij,nj->ni", table.fundamental_inverse, w), h)
        return np.einsum("nij,nj->ni", table.fundamental, inner)
    N = w.shape[0]
    out = np.zeros_like(w)
    for i in range(1, N):
        terms = np.einsum("sij,sj->si", pairwise[i, : i + 1], w[: i + 1])
        out[i] = h * (terms.sum(axis=0) - 0.5 * (terms[0] + terms[-1]))
    return out


def _backward_integral(table: TransitionTable, g: np.ndarray, h: float, pairwise=None) -> np.ndarray:
    """``I_i = int_{t_i}^{tf} Phi'(s, t_i) g(s) ds`` by trapezoid."""
    if pairwise is None:
        inner = reverse_cumulative_trapezoid(np.einsum("nji,nj->ni", table.fundamental, g), h)
        return np.einsum("nji,nj->ni", table.fundamental_inverse, inner)
    N = g.shape[0]
    out = np.zeros_like(g)
    for i in range(N - 1):
        terms = np.einsum("sji,sj->si", pairwise[i:, i], g[i:])
        out[i] = h * (terms.sum(axis=0) - 0.5 * (terms[0] + terms[-1]))
    return out


def evaluate(problem: OcpProblem, field: GridField, table: TransitionTable | None = None) -> Evaluation:
    """Feasibility errors, costate-free gradients and transversality residual."""
    x, u, t, grid = field.x, field.u, field.t, field.grid
    if x.shape[1] != problem.n or u.shape[1] != problem.m:
        raise ValueError("field dimensions do not match the problem")
    if table is None:
        table = build_transition_table(problem, field)
    pairwise = pairwise_table(table) if table.flagged else None

    xdot = time_derivative(x, grid)
    e_f = xdot - _check_finite(problem.f(x, u, t), "dynamics f")
    e_x0 = x[0] - problem.x0
    f_x = _check_finite(problem.f_x(x, u, t), "f_x")
    f_u = _check_finite(problem.f_u(x, u, t), "f_u")
    L_x = _check_finite(problem.L_x(x, u, t), "L_x")
    L_u = _check_finite(problem.L_u(x, u, t), "L_u")
    ph_x = _check_finite(problem.phi_x(x, t), "phi_x")
    ph_xx = _check_finite(problem.phi_xx(x, t), "phi_xx")
    ph_tx = _check_finite(problem.phi_tx(x, t), "phi_tx")

    g = L_x + ph_tx + np.einsum("nij,ni->nj", ph_xx, xdot) + np.einsum("nij,ni->nj", f_x, ph_x)
    p_f = ph_x + _backward_integral(table, g, grid.h, pairwise)
    pbar_u = L_u + np.einsum("nij,ni->nj", f_u, p_f)
    p_x0 = np.einsum("nji,nj->ni", table.fundamental, g)

    running = _check_finite(np.atleast_1d(problem.L(x, u, t)), "running cost L")
    xf, tf = x[-1], t[-1]
    trans = float(running[-1] + problem.phi_t(xf, tf) + ph_x[-1] @ xdot[-1])
    return Evaluation(problem, field, table, xdot, e_f, e_x0, p_f, p_x0, pbar_u, running, trans,
                      f_u=f_u, pairwise=pairwise)


def control_gradient(problem: OcpProblem, field: GridField, table: TransitionTable | None = None) -> np.ndarray:
    return evaluate(problem, field, table).pbar_u


def pf_profile(problem: OcpProblem, field: GridField, table: TransitionTable | None = None) -> np.ndarray:
    return evaluate(problem, field, table).p_f


def px0_profile(problem: OcpProblem, field: GridField, table: TransitionTable | None = None) -> np.ndarray:
    return evaluate(problem, field, table).p_x0


def ede_rhs(problem: OcpProblem, field: GridField, gains: EvolutionGains, ev: Evaluation | None = None) -> float:
    """``dtf/dtau``; zero by contract for fixed-horizon problems."""
    if not problem.free_tf:
        return 0.0
    if ev is None:
        ev = evaluate(problem, field)
    return -gains.k_tf * ev.transversality


def assemble_rhs(ev: Evaluation, gains: EvolutionGains, transport: bool = True,
                 error_terms: bool = True) -> RhsField:
    """Fill ``ev.rhs`` from an :class:`Evaluation`.

    ``error_terms=False`` drops the feasibility-restoring terms, which gives
    the original feasible-start evolution.  With ``transport`` the node
    values of a free-final-time problem follow the moving grid: each node
    sits at a fixed normalized time, so its rate picks up
    ``(d/dt) * sigma_i * dtf/dtau``.
    """
    problem, field = ev.problem, ev.field
    grid = field.grid
    dtf = ede_rhs(problem, field, gains, ev)
    du = -ev.pbar_u @ gains.K.T
    w = np.einsum("nij,nj->ni", ev.f_u, du)
    if error_terms:
        w = w - ev.e_f @ gains.K_f.T
    dx = _forward_integral(ev.table, w, grid.h, ev.pairwise)
    if error_terms:
        start = gains.K_x0 @ ev.e_x0
        if ev.pairwise is None:
            dx -= ev.table.fundamental @ start
        else:
            dx -= ev.pairwise[:, 0] @ start
    if problem.free_tf and transport and dtf != 0.0:
        s = grid.sigma[:, None] * dtf
        dx = dx + ev.xdot * s
        du = du + time_derivative(field.u, grid) * s
    ev.rhs = RhsField(_check_finite(dx, "dx/dtau"), _check_finite(du, "du/dtau"), float(dtf))
    return ev.rhs


def epde_rhs(problem: OcpProblem, field: GridField, gains: EvolutionGains,
             table: TransitionTable | None = None, transport: bool = True,
             error_terms: bool = True) -> RhsField:
    return assemble_rhs(evaluate(problem, field, table), gains, transport, error_terms)


def cov_rhs(problem: CovProblem, y, grid: Grid, K=1.0) -> np.ndarray:
    """Gradient flow ``dy/dtau = -K (F_y - d/dt F_ydot)`` with pinned ends."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    K = _as_matrix(K, y.shape[1], "K")
    t = grid.t
    yd = time_derivative(y, grid)
    Fy = _check_finite(problem.F_y(y, yd, t), "F_y")
    Fyd = _check_finite(problem.F_ydot(y, yd, t), "F_ydot")
    residual = Fy - time_derivative(Fyd, grid)
    rhs = -residual @ K.T
    rhs[0] = 0.0
    rhs[-1] = 0.0
    return rhs


def cov_functional(problem: CovProblem, y, grid: Grid) -> float:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    vals = problem.F(y, time_derivative(y, grid), grid.t)
    return float(grid.h * (np.sum(vals) - 0.5 * (vals[0] + vals[-1])))


class DynamicsBlowUp(FloatingPointError):
    def __init__(self, t: float):
        super().__init__(f"state became non-finite at t = {t:.6g}")
        self.t = t


def feasible_initialize(problem: OcpProblem, u_guess, grid: Grid | int, tf_guess: float | None = None,
                        substeps: int = 4) -> GridField:
    """Field whose states come from forward RK4 integration of the dynamics.

    ``u_guess`` is held piecewise linear between the nodes.  The result has
    zero initial error and a dynamics error of the order of the
    finite-difference truncation.
    """
    if not isinstance(grid, Grid):
        grid = Grid(int(grid), problem.t0, problem.tf if tf_guess is None else tf_guess)
    elif tf_guess is not None:
        grid = grid.with_tf(tf_guess)
    u = np.asarray(u_guess, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape != (grid.N, problem.m) or not np.all(np.isfinite(u)):
        raise ValueError(f"u_guess must be a finite ({grid.N}, {problem.m}) array")
    h = grid.h / substeps
    t_nodes = grid.t
    x = np.empty((grid.N, problem.n))
    x[0] = problem.x0
    cur = problem.x0.copy()
    for i in range(grid.N - 1):
        ua, ub = u[i], u[i + 1]
        for s in range(substeps):
            ta = t_nodes[i] + s * h
            u0 = ua + (ub - ua) * (s / substeps)
            um = ua + (ub - ua) * ((s + 0.5) / substeps)
            u1 = ua + (ub - ua) * ((s + 1) / substeps)
            k1 = problem.f(cur, u0, ta)
            k2 = problem.f(cur + 0.5 * h * k1, um, ta + 0.5 * h)
            k3 = problem.f(cur + 0.5 * h * k2, um, ta + 0.5 * h)
            k4 = problem.f(cur + h * k3, u1, ta + h)
            cur = cur + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(cur)):
                raise DynamicsBlowUp(ta + h)
        x[i + 1] = cur
    return GridField(grid, x, u)
