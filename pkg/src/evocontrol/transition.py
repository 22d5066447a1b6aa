"""State transition matrices of the linearized dynamics on the current field.

``fundamental[i]`` is ``Phi(t_i, t_0)``, obtained by integrating
``dPhi/dt = f_x(x(t), u(t), t) Phi`` with classical RK4, four substeps per
grid interval, ``f_x`` taken on the piecewise-linear interpolant of the node
values.  Node-to-node matrices are composed as ``F_i @ inv(F_j)``.  When the
fundamental matrices are badly conditioned the table is flagged and callers
switch to :func:`pairwise_table`, which multiplies RK4 step matrices
directly between the two nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .grid import GridField
from .problem import OcpProblem

SUBSTEPS = 4
CONDITION_LIMIT = 1e8


class SingularTransitionError(RuntimeError):
    pass


class FlaggedTableError(RuntimeError):
    """Raised when composing through an ill-conditioned fundamental matrix."""


@dataclass(frozen=True, eq=False)
class TransitionTable:
    fundamental: np.ndarray
    fundamental_inverse: np.ndarray
    condition_estimate: float
    steps: np.ndarray
    substeps: int = SUBSTEPS

    @property
    def flagged(self) -> bool:
        return not self.condition_estimate <= CONDITION_LIMIT

    @property
    def N(self) -> int:
        return self.fundamental.shape[0]


def interpolate_field(field: GridField, refine: int):
    """Piecewise-linear node values at ``refine`` equal parts of each interval.

    Returns ``(t, x, u)`` on ``refine * (N - 1) + 1`` points.
    """
    N = field.grid.N
    pos = np.arange(refine * (N - 1) + 1) / refine
    idx = np.minimum(np.floor(pos).astype(int), N - 2)
    w = (pos - idx)[:, None]
    x = (1.0 - w) * field.x[idx] + w * field.x[idx + 1]
    u = (1.0 - w) * field.u[idx] + w * field.u[idx + 1]
    t = field.grid.t0 + pos * field.grid.h
    return t, x, u


def rk4_step_matrices(A: np.ndarray, hs: float) -> np.ndarray:
    """One-step propagators of RK4 for ``Y' = A(t) Y``.

    ``A`` holds the generator at half-step spacing, shape ``(2M + 1, n, n)``;
    the result has shape ``(M, n, n)``.
    """
    A0, Am, A1 = A[0:-1:2], A[1::2], A[2::2]
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n), A0.shape)
    K1 = A0
    K2 = Am @ (eye + 0.5 * hs * K1)
    K3 = Am @ (eye + 0.5 * hs * K2)
    K4 = A1 @ (eye + hs * K3)
    return eye + (hs / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def build_transition_table(problem: OcpProblem, field: GridField, substeps: int = SUBSTEPS) -> TransitionTable:
    t, x, u = interpolate_field(field, 2 * substeps)
    A = np.asarray(problem.f_x(x, u, t), dtype=float)
    if not np.all(np.isfinite(A)):
        raise FloatingPointError("f_x returned non-finite values while building the transition table")
    steps = rk4_step_matrices(A, field.grid.h / substeps)
    F = kernels.chain_products(steps, substeps)
    try:
        G = np.linalg.inv(F)
    except np.linalg.LinAlgError as exc:
        raise SingularTransitionError("fundamental matrix is singular") from exc
    cond = np.abs(F).sum(axis=-2).max(axis=-1) * np.abs(G).sum(axis=-2).max(axis=-1)
    return TransitionTable(F, G, float(np.max(cond)), steps, substeps)


def phi(table: TransitionTable, i: int, j: int) -> np.ndarray:
    """``Phi(t_i, t_j)`` by composition through the fundamental matrices."""
    if table.flagged:
        raise FlaggedTableError(
            f"transition table condition estimate {table.condition_estimate:.3g} exceeds "
            f"{CONDITION_LIMIT:.0e}; use pairwise_table()"
        )
    return table.fundamental[i] @ table.fundamental_inverse[j]


def pairwise_table(table: TransitionTable) -> np.ndarray:
    """``P[i, j] = Phi(t_i, t_j)`` for ``i >= j`` without inverting anything.

    Entries above the diagonal are zero; only forward propagation is needed
    by the evolution equations.
    """
    return kernels.pairwise_products(table.steps, table.substeps)
