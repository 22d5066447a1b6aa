import numpy as np
import pytest
from scipy.integrate import solve_ivp

from conftest import random_feasible_field, random_smooth_field
from evocontrol import models
from evocontrol.diagnostics import adjoint_oracle
from evocontrol.evolution import (
    DynamicsBlowUp,
    EvolutionGains,
    NonFiniteEvaluation,
    control_gradient,
    cov_functional,
    cov_rhs,
    dynamics_error,
    ede_rhs,
    epde_rhs,
    evaluate,
    feasible_initialize,
    initial_error,
    pf_profile,
    px0_profile,
)
from evocontrol.grid import Grid, GridField, time_derivative
from evocontrol.problem import OcpProblem


def scipy_adjoint(problem, field):
    """Costate of the field's control, from tight-tolerance scipy integration.

    The state is re-integrated with the piecewise-linear control, then
    ``lam' = -(L_x + f_x' lam)``, ``lam(tf) = phi_x(x(tf))`` runs backward.
    """
    t = field.t
    u_of = lambda s: np.array([np.interp(s, t, field.u[:, k]) for k in range(problem.m)])
    fwd = solve_ivp(lambda s, x: problem.f(x, u_of(s), s), (t[0], t[-1]), problem.x0,
                    rtol=1e-12, atol=1e-12, dense_output=True, max_step=field.grid.h)
    x_of = fwd.sol

    def rhs(s, lam):
        x, u = x_of(s), u_of(s)
        return -(problem.L_x(x, u, s) + problem.f_x(x, u, s).T @ lam)

    lam_f = problem.phi_x(x_of(t[-1]), t[-1])
    bwd = solve_ivp(rhs, (t[-1], t[0]), lam_f, rtol=1e-12, atol=1e-12, dense_output=True, max_step=field.grid.h)
    lam = bwd.sol(t).T
    X = x_of(t).T
    p_u = problem.L_u(X, field.u, t) + np.einsum("nij,ni->nj", problem.f_u(X, field.u, t), lam)
    return lam, p_u


def rel_err(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


# feasibility errors --------------------------------------------------------


def test_zero_field_errors(ex1, ex2, grid61):
    zero = GridField(grid61, np.zeros((61, 2)), np.zeros((61, 1)))
    np.testing.assert_array_equal(dynamics_error(ex1, zero), 0.0)
    np.testing.assert_array_equal(initial_error(ex1, zero), [-1.0, -1.0])
    g2 = Grid(51, 0.0, 25.0)
    np.testing.assert_array_equal(initial_error(ex2, GridField(g2, np.zeros((51, 3)), np.zeros((51, 1)))),
                                  [-1.0, -0.5, 0.0])


def test_hand_computed_dynamics_error(ex1, grid61):
    x = np.stack([grid61.t, np.zeros(61)], axis=1)
    e = dynamics_error(ex1, GridField(grid61, x, np.zeros((61, 1))))
    np.testing.assert_allclose(e, np.broadcast_to([1.0, 0.0], (61, 2)), atol=1e-12)


def test_dynamics_error_reports_node():
    p = OcpProblem(n=1, m=1, t0=0.0, tf=1.0, x0=[1.0],
                   f=lambda x, u, t: np.sqrt(np.asarray(x)),
                   L=lambda x, u, t: np.zeros(np.shape(x)[:-1]), phi=lambda x, t: np.zeros(np.shape(x)[:-1]))
    g = Grid(5, 0.0, 1.0)
    x = np.array([[1.0], [0.5], [-1.0], [0.2], [0.1]])
    with np.errstate(invalid="ignore"), pytest.raises(NonFiniteEvaluation) as info:
        dynamics_error(p, GridField(g, x, np.zeros((5, 1))))
    assert info.value.node == 2


# feasible start ------------------------------------------------------------


def test_feasible_initialize_double_integrator(ex1, grid61):
    f = feasible_initialize(ex1, np.zeros(61), grid61)
    np.testing.assert_allclose(f.x[:, 0], 1 + grid61.t, atol=1e-10)
    np.testing.assert_allclose(f.x[:, 1], 1.0, atol=1e-10)
    np.testing.assert_array_equal(initial_error(ex1, f), 0.0)


def test_feasible_initialize_missile_straight_line():
    p = models.missile()
    f = feasible_initialize(p, np.zeros(51), Grid(51, 0.0, 25.0))
    vx = 500 * np.sin(np.deg2rad(30))
    vy = 500 * np.cos(np.deg2rad(30)) - 1000
    assert vy == pytest.approx(-566.987, abs=1e-3)
    np.testing.assert_allclose(f.x[:, 0], 10000 + vx * f.t, rtol=1e-12)
    np.testing.assert_allclose(f.x[:, 1], 5000 + vy * f.t, rtol=1e-12, atol=1e-8)
    np.testing.assert_array_equal(f.x[:, 2], 0.0)


def test_feasible_field_dynamics_error_is_second_order(ex2, rng):
    errs = []
    u_fun = lambda s: 0.8 * np.cos(1.3 * s) + 0.2
    for N in (51, 101, 201):
        g = Grid(N, 0.0, 25.0)
        f = feasible_initialize(ex2, u_fun(g.sigma), g)
        errs.append(np.max(np.abs(dynamics_error(ex2, f))))
    assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


def test_feasible_initialize_blow_up():
    p = OcpProblem(n=1, m=1, t0=0.0, tf=2.0, x0=[1.0],
                   f=lambda x, u, t: np.asarray(x) ** 2 * 50,
                   L=lambda x, u, t: np.zeros(np.shape(x)[:-1]), phi=lambda x, t: np.zeros(np.shape(x)[:-1]))
    with np.errstate(all="ignore"), pytest.raises(DynamicsBlowUp):
        feasible_initialize(p, np.zeros(21), 21)


# costate-free gradient -----------------------------------------------------


def test_zero_field_gradient_vanishes(ex1, grid61):
    zero = GridField(grid61, np.zeros((61, 2)), np.zeros((61, 1)))
    ev = evaluate(ex1, zero)
    np.testing.assert_array_equal(ev.pbar_u, 0.0)
    np.testing.assert_array_equal(ev.p_f, 0.0)
    np.testing.assert_array_equal(ev.p_x0, 0.0)


def test_terminal_costate_is_phi_x(ex1, rng, grid61):
    f = random_smooth_field(rng, grid61, 2, 1)
    pf = pf_profile(ex1, f)
    np.testing.assert_array_equal(pf[-1], ex1.phi_x(f.x[-1], 3.0))


def test_px0_profile_shape(ex2, rng):
    f = random_smooth_field(rng, Grid(51, 0.0, 25.0), 3, 1)
    assert px0_profile(ex2, f).shape == (51, 3)


@pytest.mark.parametrize("N", [241])
def test_gradient_matches_scipy_adjoint_on_fine_grid(ex1, rng, N):
    g = Grid(N, 0.0, 3.0)
    for _ in range(5):
        f = random_feasible_field(rng, ex1, g)
        lam, p_u = scipy_adjoint(ex1, f)
        ev = evaluate(ex1, f)
        assert rel_err(ev.pbar_u, p_u) <= 1e-4
        assert rel_err(ev.p_f, lam) <= 1e-4


def test_gradient_error_is_second_order(ex1):
    u_fun = lambda s: np.stack([0.5 - 2 * s + np.sin(np.pi * s)], 1)
    errs = []
    for N in (61, 121, 241):
        g = Grid(N, 0.0, 3.0)
        f = feasible_initialize(ex1, u_fun(g.sigma), g)
        errs.append(rel_err(control_gradient(ex1, f), scipy_adjoint(ex1, f)[1]))
    assert 3.0 < errs[0] / errs[1] < 5.0 and 3.0 < errs[1] / errs[2] < 5.0


def test_package_adjoint_oracle_agrees_with_scipy(ex1, rng, grid61):
    f = random_feasible_field(rng, ex1, grid61)
    lam, p_u = scipy_adjoint(ex1, f)
    sol = adjoint_oracle(ex1, f)
    assert sol.warning is None
    assert rel_err(sol.p_u, p_u) <= 1e-6
    assert rel_err(sol.costate, lam) <= 1e-6


def test_adjoint_oracle_source_free():
    p = OcpProblem(n=2, m=1, t0=0.0, tf=1.0, x0=[1.0, 0.0],
                   f=lambda x, u, t: np.stack([np.asarray(x)[..., 1], np.asarray(u)[..., 0]], -1),
                   L=lambda x, u, t: 0.5 * np.asarray(u)[..., 0] ** 2,
                   phi=lambda x, t: np.zeros(np.shape(x)[:-1]))
    g = Grid(21, 0.0, 1.0)
    f = feasible_initialize(p, np.cos(g.t), g)
    sol = adjoint_oracle(p, f)
    np.testing.assert_allclose(sol.costate, 0.0, atol=1e-12)
    np.testing.assert_allclose(sol.p_u[:, 0], np.cos(g.t), atol=1e-12)


def test_adjoint_oracle_warns_on_infeasible(ex1, rng, grid61):
    with pytest.warns(RuntimeWarning, match="infeasible"):
        sol = adjoint_oracle(ex1, random_smooth_field(rng, grid61, 2, 1))
    assert sol.warning


# right-hand sides ----------------------------------------------------------


def test_zero_field_rhs_closed_form(ex1, grid61, gains1):
    rhs = epde_rhs(ex1, GridField(grid61, np.zeros((61, 2)), np.zeros((61, 1))), gains1)
    np.testing.assert_array_equal(rhs.du_dtau, 0.0)
    expected = 0.1 * np.stack([1 + grid61.t, np.ones(61)], axis=1)
    np.testing.assert_allclose(rhs.dx_dtau, expected, atol=1e-13)
    assert rhs.dtf_dtau == 0.0


def test_feasible_start_reduces_to_error_free_rhs(ex1, rng, gains1):
    diffs = []
    for N in (61, 121):
        g = Grid(N, 0.0, 3.0)
        f = feasible_initialize(ex1, np.sin(g.t)[:, None] - 1.0, g)
        full = epde_rhs(ex1, f, gains1)
        bare = epde_rhs(ex1, f, gains1, error_terms=False)
        np.testing.assert_array_equal(full.du_dtau, bare.du_dtau)
        diffs.append(np.max(np.abs(full.dx_dtau - bare.dx_dtau)) / np.max(np.abs(bare.dx_dtau)))
    assert diffs[0] < 1e-2 and 3.0 < diffs[0] / diffs[1] < 5.0


def test_du_uses_gain_and_gradient(ex1, rng, grid61):
    f = random_smooth_field(rng, grid61, 2, 1)
    gains = EvolutionGains.build(2, 1, 0.3, 0.1, 0.1)
    np.testing.assert_allclose(epde_rhs(ex1, f, gains).du_dtau, -0.3 * control_gradient(ex1, f))


def test_ede_zero_field_and_fixed_horizon(ex1, ex2, gains1, gains2, grid61):
    g2 = Grid(51, 0.0, 25.0)
    assert ede_rhs(ex2, GridField(g2, np.zeros((51, 3)), np.zeros((51, 1))), gains2) == 0.0
    f = GridField(grid61, np.ones((61, 2)), np.ones((61, 1)))
    assert ede_rhs(ex1, f, gains1) == 0.0


def test_ede_transversality_expression(ex2, gains2, rng):
    g = Grid(51, 0.0, 24.0)
    f = random_smooth_field(rng, g, 3, 1)
    xdot = time_derivative(f.x, g)
    expected = ex2.L(f.x[-1], f.u[-1], 24.0) + ex2.phi_x(f.x[-1], 24.0) @ xdot[-1]
    assert ede_rhs(ex2, f, gains2) == pytest.approx(-2e-4 * expected, rel=1e-12)


def test_transport_terms(ex2, gains2, rng):
    g = Grid(51, 0.0, 25.0)
    f = random_smooth_field(rng, g, 3, 1)
    on = epde_rhs(ex2, f, gains2, transport=True)
    off = epde_rhs(ex2, f, gains2, transport=False)
    s = g.sigma[:, None] * on.dtf_dtau
    np.testing.assert_allclose(on.dx_dtau - off.dx_dtau, time_derivative(f.x, g) * s, atol=1e-14)
    np.testing.assert_allclose(on.du_dtau - off.du_dtau, time_derivative(f.u, g) * s, atol=1e-14)
    np.testing.assert_array_equal(on.dx_dtau[0], off.dx_dtau[0])


def test_rhs_vanishes_at_discrete_equilibrium(ex1, gains1):
    # long run of the flow itself gives a discrete stationary point
    from evocontrol.integrator import IntegratorConfig, integrate_tau
    from evocontrol.diagnostics import riccati_oracle

    g = Grid(61, 0.0, 3.0)
    o = riccati_oracle(models.LQ_A, models.LQ_B, models.LQ_Q, models.LQ_R, models.LQ_F, models.LQ_X0, 0.0, 3.0, g)
    fast = EvolutionGains.build(2, 1, 0.2, 1.0, 1.0)
    run = integrate_tau(ex1, GridField(g, o.x, o.u), fast,
                        IntegratorConfig(tau_max=400, rel_tol=1e-9, abs_tol=1e-12, stop_on_convergence=False,
                                         snapshot_times=(0, 400)))
    start = epde_rhs(ex1, GridField(g, o.x, o.u), gains1)
    rhs = epde_rhs(ex1, run.final_field, gains1)
    assert np.max(np.abs(rhs.du_dtau)) < 1e-2 * np.max(np.abs(start.du_dtau))
    assert np.max(np.abs(rhs.dx_dtau)) < 1e-2 * np.max(np.abs(start.dx_dtau))


def test_gains_validation(ex2):
    with pytest.raises(ValueError, match="K must be positive-definite"):
        EvolutionGains.build(2, 1, -1e-2, 0.1, 0.1)
    with pytest.raises(ValueError, match="symmetric"):
        EvolutionGains.build(2, 1, 1.0, [[1.0, 0.5], [0.0, 1.0]], 0.1)
    with pytest.raises(ValueError, match="k_tf"):
        EvolutionGains.build(3, 1, 1.0, 0.1, 0.1, 0.0).check(ex2)
    with pytest.raises(ValueError):
        EvolutionGains.build(2, 1, 1.0, np.eye(3), 0.1)


# calculus of variations ----------------------------------------------------


def test_cov_rhs_linear_is_stationary():
    p = models.dirichlet_energy()
    g = Grid(41, 0.0, 1.0)
    np.testing.assert_allclose(cov_rhs(p, g.t, g), 0.0, atol=1e-12)


def test_cov_rhs_sine():
    p = models.dirichlet_energy(0.0, 0.0)
    errs = []
    for N in (41, 81):
        g = Grid(N, 0.0, 1.0)
        rhs = cov_rhs(p, np.sin(np.pi * g.t), g)[:, 0]
        assert rhs[0] == 0.0 and rhs[-1] == 0.0
        errs.append(np.max(np.abs(rhs[2:-2] + np.pi ** 2 * np.sin(np.pi * g.t[2:-2]))))
    assert errs[0] < 0.05 and 3.5 < errs[0] / errs[1] < 4.5


def test_cov_rhs_descends(rng):
    p = models.dirichlet_energy()
    g = Grid(41, 0.0, 1.0)
    for _ in range(10):
        y = g.t + 0.3 * np.sin(np.pi * g.t * rng.integers(1, 4)) * rng.normal()
        d = cov_rhs(p, y, g)[:, 0]
        eps = 1e-6
        dJ = (cov_functional(p, y + eps * d, g) - cov_functional(p, y - eps * d, g)) / (2 * eps)
        assert dJ <= 0.0
