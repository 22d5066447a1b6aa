"""Built-in problems: linear-quadratic example, homing missile, Dirichlet-energy demo."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .problem import OcpProblem, ScalingSpec, apply_scaling

# linear-quadratic double integrator
LQ_A = np.array([[0.0, 1.0], [0.0, 0.0]])
LQ_B = np.array([[0.0], [1.0]])
LQ_Q = np.array([[2.0, 1.0], [1.0, 4.0]])
LQ_R = np.array([[0.5]])
LQ_F = np.array([[1.0, 0.0], [0.0, 2.0]])
LQ_X0 = np.array([1.0, 1.0])
LQ_T0, LQ_TF = 0.0, 3.0

# homing missile, SI units, angles in radians
MISSILE_VT = 500.0
MISSILE_VM = 1000.0
MISSILE_THETA_T = np.deg2rad(30.0)
MISSILE_F = np.diag([1e-2, 2e-2, 0.0])
MISSILE_R = 5e-4
MISSILE_X0 = np.array([10000.0, 5000.0, 0.0])
MISSILE_TF_GUESS = 25.0
MISSILE_SCALING = ScalingSpec(np.array([1e4, 1e4, 1.0]), np.array([1e2]), 1.0)


def _batch(shape_src: np.ndarray, mat: np.ndarray) -> np.ndarray:
    return np.broadcast_to(mat, shape_src.shape[:-1] + mat.shape).copy()


def linear_quadratic(A, B, Q, R, F, x0, t0, tf, name="lq") -> OcpProblem:
    """Fixed-horizon LQ problem ``xdot = Ax + Bu``, cost ``x'Fx/2 + int (x'Qx + u'Ru)/2``."""
    A, B, Q, R, F = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (A, B, Q, R, F))
    n, m = B.shape

    def f(x, u, t):
        return np.asarray(x) @ A.T + np.asarray(u) @ B.T

    def L(x, u, t):
        x = np.asarray(x)
        u = np.asarray(u)
        return 0.5 * (np.einsum("...i,ij,...j->...", x, Q, x) + np.einsum("...i,ij,...j->...", u, R, u))

    def phi(x, t):
        x = np.asarray(x)
        return 0.5 * np.einsum("...i,ij,...j->...", x, F, x)

    return OcpProblem(
        n=n, m=m, t0=float(t0), tf=float(tf), x0=x0, f=f, L=L, phi=phi, name=name,
        f_x=lambda x, u, t: _batch(np.asarray(x), A),
        f_u=lambda x, u, t: _batch(np.asarray(x), B),
        L_x=lambda x, u, t: np.asarray(x) @ Q,
        L_u=lambda x, u, t: np.asarray(u) @ R,
        phi_x=lambda x, t: np.asarray(x) @ F,
        phi_t=lambda x, t: np.zeros(np.shape(x)[:-1]),
        phi_xx=lambda x, t: _batch(np.asarray(x), F),
        phi_tx=lambda x, t: np.zeros(np.shape(x)),
    )


def example1() -> OcpProblem:
    """Double integrator with quadratic cost on ``[0, 3]``."""
    return linear_quadratic(LQ_A, LQ_B, LQ_Q, LQ_R, LQ_F, LQ_X0, LQ_T0, LQ_TF, name="example1")


def missile(x0=None, theta_target: float = MISSILE_THETA_T, tf_guess: float = MISSILE_TF_GUESS) -> OcpProblem:
    """Constant-speed missile against a straight-moving target, free final time.

    State is ``(x, y, theta_M)`` relative position in metres and missile
    azimuth in radians; control is the normal acceleration in m/s^2.
    """
    vt, vm, tt = MISSILE_VT, MISSILE_VM, float(theta_target)
    x0 = MISSILE_X0 if x0 is None else np.asarray(x0, dtype=float)
    F, R = MISSILE_F, MISSILE_R

    def f(x, u, t):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        th = x[..., 2]
        return np.stack(
            [vt * np.sin(tt) - vm * np.sin(th), vt * np.cos(tt) - vm * np.cos(th), u[..., 0] / vm],
            axis=-1,
        )

    def f_x(x, u, t):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (3,))
        out[..., 0, 2] = -vm * np.cos(x[..., 2])
        out[..., 1, 2] = vm * np.sin(x[..., 2])
        return out

    def f_u(x, u, t):
        out = np.zeros(np.shape(x)[:-1] + (3, 1))
        out[..., 2, 0] = 1.0 / vm
        return out

    def L(x, u, t):
        return 0.5 * R * np.asarray(u, dtype=float)[..., 0] ** 2

    def phi(x, t):
        x = np.asarray(x, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", x, F, x)

    return OcpProblem(
        n=3, m=1, t0=0.0, tf=float(tf_guess), x0=x0, f=f, L=L, phi=phi,
        free_tf=True, name="example2",
        f_x=f_x, f_u=f_u,
        L_x=lambda x, u, t: np.zeros(np.shape(x)),
        L_u=lambda x, u, t: R * np.asarray(u, dtype=float),
        phi_x=lambda x, t: np.asarray(x, dtype=float) @ F,
        phi_t=lambda x, t: np.zeros(np.shape(x)[:-1]),
        phi_xx=lambda x, t: _batch(np.asarray(x), F),
        phi_tx=lambda x, t: np.zeros(np.shape(x)),
    )


def example2(scaling: ScalingSpec | None = MISSILE_SCALING, **kwargs) -> OcpProblem:
    """Missile problem in solver units (scaled unless ``scaling`` is None).

    Keyword arguments are passed to :func:`missile`.
    """
    p = missile(**kwargs)
    return p if scaling is None else apply_scaling(p, scaling)


@dataclass(frozen=True, eq=False)
class CovProblem:
    """``min int F(y, ydot, t) dt`` with both endpoints pinned.

    ``F_y`` and ``F_ydot`` are batched like the OCP evaluators: ``y`` and
    ``ydot`` have shape ``(..., k)``.
    """

    F: Callable
    F_y: Callable
    F_ydot: Callable
    y0: np.ndarray
    yf: np.ndarray
    t0: float = 0.0
    tf: float = 1.0

    @property
    def k(self) -> int:
        return int(np.size(self.y0))


def dirichlet_energy(y0=0.0, yf=1.0, t0=0.0, tf=1.0) -> CovProblem:
    """``F = |ydot|^2 / 2``; the minimizer is the straight line."""
    return CovProblem(
        F=lambda y, yd, t: 0.5 * np.sum(np.asarray(yd) ** 2, axis=-1),
        F_y=lambda y, yd, t: np.zeros(np.shape(y)),
        F_ydot=lambda y, yd, t: np.asarray(yd, dtype=float),
        y0=np.atleast_1d(np.asarray(y0, dtype=float)),
        yf=np.atleast_1d(np.asarray(yf, dtype=float)),
        t0=float(t0), tf=float(tf),
    )
