"""Optimal control problem definition, finite-difference partials and scaling.

Every evaluator of an :class:`OcpProblem` is batched: states have shape
``(..., n)``, controls ``(..., m)`` and times ``(...)``, and the leading axes
broadcast.  Partial derivatives that are not supplied are filled in with
central finite differences at construction time, so callers can always use
``problem.f_x(...)`` and friends without checking.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

Array = np.ndarray

EPS = np.finfo(float).eps
FD_STEP = np.sqrt(EPS)
# nested differences (second derivatives of phi) need a larger step
FD_STEP2 = EPS ** 0.25

PARTIALS = ("f_x", "f_u", "L_x", "L_u", "phi_x", "phi_t", "phi_xx", "phi_tx")


def _fd_jacobian(fun: Callable[[Array], Array], z: Array, step: float) -> Array:
    """Central-difference Jacobian of a batched function w.r.t. the last axis.

    Returns an array of shape ``out.shape + (k,)`` where ``k = z.shape[-1]``.
    """
    z = np.asarray(z, dtype=float)
    k = z.shape[-1]
    cols = []
    for j in range(k):
        h = step * (1.0 + np.abs(z[..., j]))
        zp = z.copy()
        zm = z.copy()
        zp[..., j] += h
        zm[..., j] -= h
        dh = zp[..., j] - zm[..., j]
        diff = np.asarray(fun(zp), dtype=float) - np.asarray(fun(zm), dtype=float)
        cols.append(diff / dh.reshape(dh.shape + (1,) * (diff.ndim - dh.ndim)))
    return np.stack(cols, axis=-1)


def _fd_time(fun: Callable[[Array], Array], t: Array, step: float) -> Array:
    t = np.asarray(t, dtype=float)
    h = step * (1.0 + np.abs(t))
    tp, tm = t + h, t - h
    diff = np.asarray(fun(tp), dtype=float) - np.asarray(fun(tm), dtype=float)
    dh = tp - tm
    return diff / dh.reshape(dh.shape + (1,) * (diff.ndim - dh.ndim))


@dataclass(frozen=True, eq=False)
class OcpProblem:
    """Bolza-form optimal control problem with free terminal state.

    Minimize ``phi(x(tf), tf) + int_{t0}^{tf} L(x, u, t) dt`` subject to
    ``xdot = f(x, u, t)`` and ``x(t0) = x0``.  ``tf`` is the fixed terminal
    time when ``free_tf`` is false and the initial guess otherwise.

    Analytic partials are optional; missing ones are replaced with central
    finite differences.  The names of supplied partials are kept in
    ``analytic``.
    """

    n: int
    m: int
    t0: float
    tf: float
    x0: Array
    f: Callable[[Array, Array, Array], Array]
    L: Callable[[Array, Array, Array], Array]
    phi: Callable[[Array, Array], Array]
    free_tf: bool = False
    name: str = "custom"
    f_x: Optional[Callable] = None
    f_u: Optional[Callable] = None
    L_x: Optional[Callable] = None
    L_u: Optional[Callable] = None
    phi_x: Optional[Callable] = None
    phi_t: Optional[Callable] = None
    phi_xx: Optional[Callable] = None
    phi_tx: Optional[Callable] = None
    analytic: frozenset = field(default=frozenset(), compare=False)

    def __post_init__(self):
        if int(self.n) < 1 or int(self.m) < 1:
            raise ValueError(f"state and control dimensions must be >= 1, got n={self.n}, m={self.m}")
        x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if x0.shape != (self.n,):
            raise ValueError(f"x0 has shape {x0.shape}, expected ({self.n},)")
        if not self.tf > self.t0:
            raise ValueError(f"tf={self.tf} must exceed t0={self.t0}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        supplied = {p for p in PARTIALS if getattr(self, p) is not None}
        if not self.analytic:
            object.__setattr__(self, "analytic", frozenset(supplied))
        for name in PARTIALS:
            if getattr(self, name) is None:
                object.__setattr__(self, name, getattr(self, "_fd_" + name))

    # finite-difference fallbacks ------------------------------------------

    def _fd_f_x(self, x, u, t):
        return _fd_jacobian(lambda z: self.f(z, u, t), x, FD_STEP)

    def _fd_f_u(self, x, u, t):
        return _fd_jacobian(lambda z: self.f(x, z, t), u, FD_STEP)

    def _fd_L_x(self, x, u, t):
        return _fd_jacobian(lambda z: self.L(z, u, t), x, FD_STEP)

    def _fd_L_u(self, x, u, t):
        return _fd_jacobian(lambda z: self.L(x, z, t), u, FD_STEP)

    def _fd_phi_x(self, x, t):
        return _fd_jacobian(lambda z: self.phi(z, t), x, FD_STEP)

    def _fd_phi_t(self, x, t):
        return _fd_time(lambda s: self.phi(x, s), t, FD_STEP)

    def _fd_phi_xx(self, x, t):
        if "phi_x" in self.analytic:
            jac = _fd_jacobian(lambda z: self.phi_x(z, t), x, FD_STEP)
        else:
            jac = _fd_jacobian(
                lambda z: _fd_jacobian(lambda w: self.phi(w, t), z, FD_STEP2), x, FD_STEP2
            )
        return 0.5 * (jac + np.swapaxes(jac, -1, -2))

    def _fd_phi_tx(self, x, t):
        if "phi_x" in self.analytic:
            return _fd_time(lambda s: self.phi_x(x, s), t, FD_STEP)
        return _fd_time(lambda s: _fd_jacobian(lambda w: self.phi(w, s), x, FD_STEP2), t, FD_STEP2)

    def finite_difference(self, name: str) -> Callable:
        """Return the finite-difference evaluator for partial ``name``."""
        if name not in PARTIALS:
            raise KeyError(name)
        return getattr(self, "_fd_" + name)


@dataclass(frozen=True)
class DerivativeReport:
    """Maximum relative discrepancy of each partial against finite differences."""

    max_rel_error: dict
    worst_point: dict
    tolerance: float = 1e-4
    nonfinite: list = field(default_factory=list)

    @property
    def flagged(self) -> list:
        return sorted(k for k, v in self.max_rel_error.items() if not v <= self.tolerance)

    @property
    def ok(self) -> bool:
        return not self.flagged and not self.nonfinite


def _rel_error(value: Array, reference: Array) -> float:
    value = np.asarray(value, dtype=float)
    reference = np.asarray(reference, dtype=float)
    scale = max(1.0, float(np.max(np.abs(reference), initial=0.0)))
    return float(np.max(np.abs(value - reference), initial=0.0)) / scale


def check_derivatives(problem: OcpProblem, sample_points, tolerance: float = 1e-4) -> DerivativeReport:
    """Compare every partial evaluator with central finite differences.

    ``sample_points`` is an iterable of ``(x, u, t)``.  The discrepancy is
    ``max|analytic - fd| / max(1, max|fd|)`` so that partials with zero
    entries still produce a meaningful number.
    """
    errors = {name: 0.0 for name in PARTIALS}
    worst = {name: None for name in PARTIALS}
    nonfinite = []
    for x, u, t in sample_points:
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        t = float(t)
        base = [problem.f(x, u, t), problem.L(x, u, t), problem.phi(x, t)]
        if not all(np.all(np.isfinite(b)) for b in base):
            nonfinite.append((x, u, t))
            continue
        for name in PARTIALS:
            args = (x, t) if name.startswith("phi") else (x, u, t)
            got = getattr(problem, name)(*args)
            ref = problem.finite_difference(name)(*args)
            if not (np.all(np.isfinite(got)) and np.all(np.isfinite(ref))):
                nonfinite.append((x, u, t))
                continue
            err = _rel_error(got, ref)
            if err > errors[name] or worst[name] is None:
                errors[name] = max(err, errors[name])
                worst[name] = (x, u, t)
    return DerivativeReport(errors, worst, tolerance, nonfinite)


@dataclass(frozen=True)
class ScalingSpec:
    """Componentwise scales; scaled variables are ``x / state_scales`` etc."""

    state_scales: Array
    control_scales: Array
    time_scale: float = 1.0

    def __post_init__(self):
        sx = np.asarray(self.state_scales, dtype=float).reshape(-1)
        su = np.asarray(self.control_scales, dtype=float).reshape(-1)
        for label, arr in (("state_scales", sx), ("control_scales", su), ("time_scale", np.atleast_1d(self.time_scale))):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValueError(f"{label} must be positive and finite, got {arr}")
        object.__setattr__(self, "state_scales", sx)
        object.__setattr__(self, "control_scales", su)
        object.__setattr__(self, "time_scale", float(self.time_scale))

    @classmethod
    def identity(cls, n: int, m: int) -> "ScalingSpec":
        return cls(np.ones(n), np.ones(m), 1.0)

    def scale_x(self, x):
        return np.asarray(x, dtype=float) / self.state_scales

    def scale_u(self, u):
        return np.asarray(u, dtype=float) / self.control_scales

    def scale_t(self, t):
        return np.asarray(t, dtype=float) / self.time_scale

    def unscale_x(self, xs):
        return np.asarray(xs, dtype=float) * self.state_scales

    def unscale_u(self, us):
        return np.asarray(us, dtype=float) * self.control_scales

    def unscale_t(self, ts):
        return np.asarray(ts, dtype=float) * self.time_scale


def apply_scaling(problem: OcpProblem, spec: ScalingSpec) -> OcpProblem:
    """Rewrite ``problem`` in scaled variables.

    The running cost is multiplied by the time scale so that the scaled
    performance index equals the original one exactly.
    """
    sx, su, st = spec.state_scales, spec.control_scales, spec.time_scale
    if sx.shape != (problem.n,) or su.shape != (problem.m,):
        raise ValueError("scaling dimensions do not match the problem")
    p = problem
    rate = st / sx

    def X(xs):
        return np.asarray(xs, dtype=float) * sx

    def U(us):
        return np.asarray(us, dtype=float) * su

    def T(ts):
        return np.asarray(ts, dtype=float) * st

    def f(x, u, t):
        return rate * p.f(X(x), U(u), T(t))

    def L(x, u, t):
        return st * np.asarray(p.L(X(x), U(u), T(t)))

    def phi(x, t):
        return p.phi(X(x), T(t))

    def f_x(x, u, t):
        return rate[:, None] * p.f_x(X(x), U(u), T(t)) * sx

    def f_u(x, u, t):
        return rate[:, None] * p.f_u(X(x), U(u), T(t)) * su

    def L_x(x, u, t):
        return st * p.L_x(X(x), U(u), T(t)) * sx

    def L_u(x, u, t):
        return st * p.L_u(X(x), U(u), T(t)) * su

    def phi_x(x, t):
        return p.phi_x(X(x), T(t)) * sx

    def phi_t(x, t):
        return st * np.asarray(p.phi_t(X(x), T(t)))

    def phi_xx(x, t):
        return sx[:, None] * p.phi_xx(X(x), T(t)) * sx

    def phi_tx(x, t):
        return st * p.phi_tx(X(x), T(t)) * sx

    return OcpProblem(
        n=p.n, m=p.m, t0=p.t0 / st, tf=p.tf / st, x0=p.x0 / sx,
        f=f, L=L, phi=phi, free_tf=p.free_tf, name=p.name,
        f_x=f_x, f_u=f_u, L_x=L_x, L_u=L_u,
        phi_x=phi_x, phi_t=phi_t, phi_xx=phi_xx, phi_tx=phi_tx,
        analytic=p.analytic,
    )


def with_terminal_time(problem: OcpProblem, tf: float) -> OcpProblem:
    """Copy of ``problem`` with a different terminal time (value or guess)."""
    kwargs = {f.name: getattr(problem, f.name) for f in fields(problem)}
    # fallbacks are bound methods of the old instance; let the copy rebuild them
    for name in PARTIALS:
        if name not in problem.analytic:
            kwargs[name] = None
    kwargs["tf"] = float(tf)
    return OcpProblem(**kwargs)


__all__ = [
    "OcpProblem",
    "ScalingSpec",
    "DerivativeReport",
    "check_derivatives",
    "apply_scaling",
    "with_terminal_time",
    "PARTIALS",
]
