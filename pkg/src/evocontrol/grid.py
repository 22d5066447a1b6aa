"""Uniform normalized time grid, finite-difference derivatives and trapezoid sums."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    """Uniform grid on ``[t0, tf]`` with ``N`` nodes at ``sigma_i = i/(N-1)``."""

    N: int
    t0: float
    tf: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValueError(f"grid needs N >= 3 nodes, got {self.N}")
        if not (np.isfinite(self.t0) and np.isfinite(self.tf)) or not self.tf > self.t0:
            raise ValueError(f"grid needs tf > t0, got t0={self.t0}, tf={self.tf}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "tf", float(self.tf))

    @property
    def sigma(self) -> np.ndarray:
        return np.arange(self.N) / (self.N - 1)

    @property
    def h(self) -> float:
        return (self.tf - self.t0) / (self.N - 1)

    @property
    def t(self) -> np.ndarray:
        t = self.t0 + self.sigma * (self.tf - self.t0)
        t[-1] = self.tf
        return t

    def with_tf(self, tf: float) -> "Grid":
        return Grid(self.N, self.t0, tf)


def build_grid(N: int, t0: float, tf: float) -> Grid:
    return Grid(N, t0, tf)


def time_derivative(values, grid: Grid) -> np.ndarray:
    """d/dt of node values along axis 0.

    Second-order central differences inside, three-point one-sided stencils
    at both ends, so quadratics are differentiated exactly.
    """
    values = np.asarray(values, dtype=float)
    if values.shape[0] != grid.N:
        raise ValueError(f"expected {grid.N} rows, got {values.shape[0]}")
    if not np.all(np.isfinite(values)):
        raise ValueError("time_derivative received non-finite values")
    return np.gradient(values, grid.h, axis=0, edge_order=2)


def cumulative_trapezoid(values, h: float) -> np.ndarray:
    """Running trapezoid sums ``C[i] = int_{t_0}^{t_i}`` along axis 0, ``C[0] = 0``."""
    values = np.asarray(values, dtype=float)
    out = np.zeros_like(values)
    np.cumsum(0.5 * h * (values[1:] + values[:-1]), axis=0, out=out[1:])
    return out


def reverse_cumulative_trapezoid(values, h: float) -> np.ndarray:
    """Running trapezoid sums ``C[i] = int_{t_i}^{t_f}`` along axis 0, ``C[-1] = 0``."""
    return cumulative_trapezoid(np.asarray(values)[::-1], h)[::-1]


def quadrature(values, grid: Grid, from_index: int = 0, to_index: int | None = None) -> float | np.ndarray:
    """Composite trapezoid rule over ``[t_i, t_j]``."""
    values = np.asarray(values, dtype=float)
    if to_index is None:
        to_index = grid.N - 1
    if not 0 <= from_index <= to_index <= grid.N - 1:
        raise IndexError(f"invalid quadrature range [{from_index}, {to_index}] for N={grid.N}")
    if values.shape[0] != grid.N:
        raise ValueError(f"expected {grid.N} rows, got {values.shape[0]}")
    seg = values[from_index:to_index + 1]
    if len(seg) < 2:
        return np.zeros(values.shape[1:]) if values.ndim > 1 else 0.0
    return 0.5 * grid.h * (seg[0] + seg[-1]) + grid.h * seg[1:-1].sum(axis=0)


@dataclass(frozen=True, eq=False)
class GridField:
    """Node values of state and control on a grid; ``tf`` lives on the grid."""

    grid: Grid
    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        u = np.array(self.u, dtype=float)
        if x.ndim != 2 or u.ndim != 2:
            raise ValueError("field node arrays must be 2-D (N x n, N x m)")
        if x.shape[0] != self.grid.N or u.shape[0] != self.grid.N:
            raise ValueError(f"field rows {x.shape[0]}/{u.shape[0]} do not match N={self.grid.N}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
            raise ValueError("field contains non-finite entries")
        x.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    @property
    def tf(self) -> float:
        return self.grid.tf

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    @classmethod
    def zeros(cls, grid: Grid, n: int, m: int) -> "GridField":
        return cls(grid, np.zeros((grid.N, n)), np.zeros((grid.N, m)))

    def replace(self, x=None, u=None, tf=None) -> "GridField":
        grid = self.grid if tf is None else self.grid.with_tf(tf)
        return GridField(grid, self.x if x is None else x, self.u if u is None else u)


def scale_field(field: GridField, spec) -> GridField:
    grid = Grid(field.grid.N, field.grid.t0 / spec.time_scale, field.grid.tf / spec.time_scale)
    return GridField(grid, spec.scale_x(field.x), spec.scale_u(field.u))


def unscale_field(field: GridField, spec) -> GridField:
    grid = Grid(field.grid.N, field.grid.t0 * spec.time_scale, field.grid.tf * spec.time_scale)
    return GridField(grid, spec.unscale_x(field.x), spec.unscale_u(field.u))
