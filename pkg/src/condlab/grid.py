"""Uniform tensor grids on D x E with trapezoid quadrature.

Array convention: ``values[i, j] = f(x_i, y_j)`` -- rows follow the state
axis x, columns follow the query axis y.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import GridMismatch, InvalidArgument

MASS_TOL = 1e-8


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h, dtype=np.float64)
    w[0] = w[-1] = 0.5 * h
    return w


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid2D:
    x_min: float
    x_max: float
    nx: int
    y_min: float
    y_max: float
    ny: int

    def __post_init__(self):
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)
                and np.isfinite(self.y_min) and np.isfinite(self.y_max)):
            raise InvalidArgument("grid bounds must be finite")
        if not self.x_min < self.x_max or not self.y_min < self.y_max:
            raise InvalidArgument(
                f"degenerate bounds x=[{self.x_min}, {self.x_max}] y=[{self.y_min}, {self.y_max}]")
        if int(self.nx) != self.nx or int(self.ny) != self.ny or self.nx < 2 or self.ny < 2:
            raise InvalidArgument(f"node counts must be integers >= 2, got ({self.nx}, {self.ny})")

    def __eq__(self, other):
        if not isinstance(other, Grid2D):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def key(self) -> tuple:
        return (float(self.x_min), float(self.x_max), int(self.nx),
                float(self.y_min), float(self.y_max), int(self.ny))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @cached_property
    def x_nodes(self) -> np.ndarray:
        return _frozen(np.linspace(self.x_min, self.x_max, self.nx))

    @cached_property
    def y_nodes(self) -> np.ndarray:
        return _frozen(np.linspace(self.y_min, self.y_max, self.ny))

    @property
    def hx(self) -> float:
        return (self.x_max - self.x_min) / (self.nx - 1)

    @property
    def hy(self) -> float:
        return (self.y_max - self.y_min) / (self.ny - 1)

    @property
    def x_length(self) -> float:
        """Lebesgue measure of D (also the sum of the x quadrature weights)."""
        return self.x_max - self.x_min

    @property
    def y_length(self) -> float:
        return self.y_max - self.y_min

    @cached_property
    def wx(self) -> np.ndarray:
        return _frozen(trapezoid_weights(self.nx, self.hx))

    @cached_property
    def wy(self) -> np.ndarray:
        return _frozen(trapezoid_weights(self.ny, self.hy))

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x_nodes, self.y_nodes, indexing="ij")

    def subgrid(self, ix: slice, iy: slice) -> "Grid2D":
        xs, ys = self.x_nodes[ix], self.y_nodes[iy]
        return Grid2D(float(xs[0]), float(xs[-1]), len(xs), float(ys[0]), float(ys[-1]), len(ys))

    def y_index(self, y: float) -> int | None:
        """Index of the node equal to ``y`` (exact match), else None."""
        hits = np.flatnonzero(self.y_nodes == y)
        return int(hits[0]) if hits.size else None


def make_grid(x_min, x_max, nx, y_min, y_max, ny) -> Grid2D:
    if not (float(nx).is_integer() and float(ny).is_integer()):
        raise InvalidArgument(f"node counts must be integers, got ({nx}, {ny})")
    return Grid2D(float(x_min), float(x_max), int(nx), float(y_min), float(y_max), int(ny))


@dataclass(frozen=True, eq=False)
class GridField2D:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _frozen(self.values)
        if v.shape != self.grid.shape:
            raise InvalidArgument(f"values shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid2D, f: Callable[[np.ndarray, np.ndarray], np.ndarray]):
        X, Y = grid.mesh()
        return cls(grid, np.broadcast_to(f(X, Y), grid.shape))


class GridDensity2D(GridField2D):
    """Nonnegative field with unit trapezoid mass."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise InvalidArgument("density values must be nonnegative")
        mass = integrate2d(self)
        if abs(mass - 1.0) > MASS_TOL:
            raise InvalidArgument(f"density mass {mass!r} differs from 1 by more than {MASS_TOL}")

    @classmethod
    def normalized(cls, grid: Grid2D, values) -> "GridDensity2D":
        """Clip tiny negatives to zero and rescale to unit mass."""
        v = np.maximum(np.asarray(values, dtype=np.float64), 0.0)
        mass = _integrate(grid, v)
        if not mass > 0:
            raise InvalidArgument("cannot normalize a field with zero mass")
        return cls(grid, v / mass)


@dataclass(frozen=True, eq=False)
class GridField1D:
    nodes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        nodes, v = _frozen(self.nodes), _frozen(self.values)
        if nodes.ndim != 1 or nodes.size < 2 or v.shape != nodes.shape:
            raise InvalidArgument("1D field needs >= 2 nodes and matching values")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field values must be finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", v)

    @property
    def spacing(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    def integral(self) -> float:
        return float(trapezoid_weights(self.nodes.size, self.spacing) @ self.values)


class GridDensity1D(GridField1D):
    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise InvalidArgument("density values must be nonnegative")
        mass = self.integral()
        if abs(mass - 1.0) > MASS_TOL:
            raise InvalidArgument(f"1D density mass {mass!r} differs from 1 by more than {MASS_TOL}")


def _integrate(grid: Grid2D, values: np.ndarray) -> float:
    return float(grid.wy @ (grid.wx @ values))


def integrate2d(f: GridField2D) -> float:
    # marginal first, so that integrating marginal_y reproduces this bit for bit
    return _integrate(f.grid, f.values)


def marginal_values(grid: Grid2D, values: np.ndarray) -> np.ndarray:
    """x-quadrature of every y column; works on stacked arrays (..., nx, ny)."""
    return np.einsum("i,...ij->...j", grid.wx, values) if values.ndim > 2 else grid.wx @ values


def marginal_y(rho: GridField2D) -> GridField1D:
    return GridField1D(rho.grid.y_nodes, rho.grid.wx @ rho.values)


def delta_of(rho: GridField2D) -> float:
    return float(np.min(rho.grid.wx @ rho.values))


def _check_same_grid(f: GridField2D, g: GridField2D):
    if f.grid != g.grid:
        raise GridMismatch(f"grid mismatch: {f.grid.key()} vs {g.grid.key()}")


def sup_distance(f: GridField2D, g: GridField2D) -> float:
    _check_same_grid(f, g)
    return float(np.max(np.abs(f.values - g.values)))


def l1_distance(f: GridField2D, g: GridField2D) -> float:
    _check_same_grid(f, g)
    return _integrate(f.grid, np.abs(f.values - g.values))


class KernelField(GridField2D):
    """Grid Markov kernel: every y column is a density in x."""

    def __post_init__(self):
        super().__post_init__()
        if np.any(self.values < 0):
            raise InvalidArgument("kernel values must be nonnegative")
        masses = self.grid.wx @ self.values
        bad = np.flatnonzero(np.abs(masses - 1.0) > MASS_TOL)
        if bad.size:
            j = int(bad[0])
            raise InvalidArgument(f"kernel slice y[{j}] has mass {masses[j]!r}, expected 1")

    def slice_at(self, j: int) -> GridDensity1D:
        return GridDensity1D(self.grid.x_nodes, self.values[:, j])


def sup_distance_1d(f, g) -> float:
    fv = f.values if isinstance(f, GridField1D) else np.asarray(f)
    gv = g.values if isinstance(g, GridField1D) else np.asarray(g)
    if fv.shape != gv.shape:
        raise GridMismatch(f"1D length mismatch: {fv.shape} vs {gv.shape}")
    return float(np.max(np.abs(fv - gv)))
