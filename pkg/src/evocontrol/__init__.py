"""Optimal control by evolving whole trajectories in a virtual time.

The solver semi-discretizes the evolution equations on a uniform grid and
integrates the resulting ODE system from an arbitrary initial field.
"""

from .diagnostics import (
    DiagnosticsRecord,
    LyapunovConstants,
    adjoint_oracle,
    estimate_bounds,
    lyapunov_value,
    optimality_residuals,
    performance_index,
    riccati_oracle,
    select_lyapunov_constants,
)
from .evolution import (
    EvolutionGains,
    control_gradient,
    cov_rhs,
    ede_rhs,
    epde_rhs,
    evaluate,
    feasible_initialize,
)
from .grid import Grid, GridField, build_grid, quadrature, time_derivative
from .integrator import EvolutionRun, IntegratorConfig, integrate_cov, integrate_tau, pack, unpack
from .kernels import BACKEND
from .problem import OcpProblem, ScalingSpec, apply_scaling, check_derivatives
from .transition import TransitionTable, build_transition_table, phi

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DiagnosticsRecord", "EvolutionGains", "EvolutionRun", "Grid", "GridField",
    "IntegratorConfig", "LyapunovConstants", "OcpProblem", "ScalingSpec", "TransitionTable",
    "adjoint_oracle", "apply_scaling", "build_grid", "build_transition_table", "check_derivatives",
    "control_gradient", "cov_rhs", "ede_rhs", "epde_rhs", "estimate_bounds", "evaluate",
    "feasible_initialize", "integrate_cov", "integrate_tau", "lyapunov_value", "optimality_residuals",
    "pack", "performance_index", "phi", "quadrature", "riccati_oracle", "select_lyapunov_constants",
    "time_derivative", "unpack",
]
