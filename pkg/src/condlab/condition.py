"""Discrete conditioning operators on the grid.

``kernel_condition`` divides every y column of a joint by its x-marginal;
``incontext_condition`` returns one such column for an arbitrary query.
The mollified extension and the truncation / zero-extension / restriction
operators used by the whole-space architecture live here as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DegenerateQuery, DomainViolation, InvalidArgument, OutOfDomain
from .grid import (
    Grid2D,
    GridDensity1D,
    GridDensity2D,
    GridField2D,
    KernelField,
    sup_distance_1d,
)

__all__ = [
    "KernelField", "MollifierSchedule", "DEFAULT_SCHEDULE", "IndexBox",
    "kernel_condition", "incontext_condition", "mollify", "extension_limit",
    "truncate_tm", "relu_clamp", "zero_extend", "restrict",
]

DEGENERATE_MARGINAL = 1e-300


def _check_delta(marg: np.ndarray, delta_min: float):
    if not delta_min > 0:
        raise InvalidArgument(f"delta_min must be positive, got {delta_min}")
    j = int(np.argmin(marg))
    if marg[j] < delta_min:
        raise DomainViolation(
            f"marginal at y index {j} is {marg[j]:.3e} < delta_min {delta_min:.3e}",
            y_index=j, marginal=float(marg[j]))


def kernel_condition(rho: GridField2D, delta_min: float) -> KernelField:
    marg = rho.grid.wx @ rho.values
    _check_delta(marg, delta_min)
    return KernelField(rho.grid, rho.values / marg)


def _query_slice(grid: Grid2D, values: np.ndarray, y: float) -> tuple[np.ndarray, float]:
    """Joint slice at y (linear in y between nodes) and its x-quadrature."""
    if not grid.y_min <= y <= grid.y_max:
        raise OutOfDomain(f"query y={y} outside [{grid.y_min}, {grid.y_max}]")
    j = grid.y_index(y)
    if j is not None:
        col = values[:, j]
        return col, (grid.wx @ values)[j]
    j = min(int((y - grid.y_min) // grid.hy), grid.ny - 2)
    t = (y - grid.y_nodes[j]) / grid.hy
    col = (1.0 - t) * values[:, j] + t * values[:, j + 1]
    return col, grid.wx @ col


def incontext_condition(rho: GridField2D, y: float, delta_min: float) -> GridDensity1D:
    grid = rho.grid
    col, m = _query_slice(grid, rho.values, float(y))
    _check_delta(grid.wx @ rho.values, delta_min)
    return GridDensity1D(grid.x_nodes, col / m)


@dataclass(frozen=True)
class MollifierSchedule:
    epsilons: tuple[float, ...]

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        if not eps or any(e <= 0 for e in eps):
            raise InvalidArgument("mollifier widths must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise InvalidArgument("mollifier widths must be strictly decreasing")
        object.__setattr__(self, "epsilons", eps)


DEFAULT_SCHEDULE = MollifierSchedule((0.5, 0.2, 0.1, 0.05, 0.02))


def _gauss_taps(n: int, h: float, eps: float) -> np.ndarray:
    """Discrete 1D Gaussian of variance eps on offsets -(n-1)..(n-1), unit h-mass."""
    off = np.arange(-(n - 1), n) * h
    g = np.exp(-0.5 * off * off / eps)
    return g / (g.sum() * h)


def _toeplitz(n: int, h: float, eps: float) -> np.ndarray:
    g = _gauss_taps(n, h, eps)
    idx = np.arange(n)
    return g[idx[:, None] - idx[None, :] + n - 1] * h


def mollify(rho: GridField2D, eps: float, method: str = "direct") -> GridDensity2D:
    """Convolve with a grid-sampled N(0, eps I) and renormalize to unit mass.

    Outside the grid the density is taken as zero (linear, not circular,
    convolution). ``method="direct"`` sums nonnegative terms and keeps full
    relative precision in near-vanishing regions; ``"fft"`` is faster but
    carries ~1e-16 absolute noise relative to the peak.
    """
    if not eps > 0:
        raise InvalidArgument(f"mollifier width must be positive, got {eps}")
    grid = rho.grid
    if method == "direct":
        out = _toeplitz(grid.nx, grid.hx, eps) @ rho.values @ _toeplitz(grid.ny, grid.hy, eps).T
    elif method == "fft":
        taps = np.outer(_gauss_taps(grid.nx, grid.hx, eps), _gauss_taps(grid.ny, grid.hy, eps))
        out = fftconvolve(rho.values, taps, mode="same") * (grid.hx * grid.hy)
    else:
        raise InvalidArgument(f"unknown convolution method {method!r}")
    return GridDensity2D.normalized(grid, out)


@dataclass
class ExtensionDiagnostics:
    epsilons: tuple[float, ...]
    marginals_at_y: list[float]
    step_sup_distances: list[float]  # between consecutive iterates
    iterates: list[np.ndarray]


def extension_limit(rho: GridField2D, y: float, schedule: MollifierSchedule = DEFAULT_SCHEDULE,
                    method: str = "direct") -> tuple[GridDensity1D, ExtensionDiagnostics]:
    grid = rho.grid
    iterates, margs = [], []
    for eps in schedule.epsilons:
        smooth = mollify(rho, eps, method=method)
        col, m = _query_slice(grid, smooth.values, float(y))
        if not m >= DEGENERATE_MARGINAL:
            raise DegenerateQuery(f"mollified marginal at y={y} is {m!r} for eps={eps}")
        iterates.append(col / m)
        margs.append(float(m))
    steps = [sup_distance_1d(a, b) for a, b in zip(iterates, iterates[1:])]
    diag = ExtensionDiagnostics(schedule.epsilons, margs, steps, iterates)
    return GridDensity1D(grid.x_nodes, iterates[-1]), diag


def truncate_tm(f: GridField2D, M: float) -> GridField2D:
    if not M > 0:
        raise InvalidArgument(f"truncation level must be positive, got {M}")
    return GridField2D(f.grid, np.clip(f.values, -M, M))


def relu_clamp(z, M: float):
    """t_M(z) = (z + M)_+ - (z - M)_+ - M as a one-hidden-layer ReLU net.

    Agrees with clipping whenever z + M and z - M are exact in floating
    point; otherwise the two differ by a few ulps of |z| + M.
    """
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z + M, 0.0) - np.maximum(z - M, 0.0) - M


@dataclass(frozen=True)
class IndexBox:
    """Half-open index ranges [i0, i1) x [j0, j1)."""

    i0: int
    i1: int
    j0: int
    j1: int

    @classmethod
    def full(cls, grid: Grid2D) -> "IndexBox":
        return cls(0, grid.nx, 0, grid.ny)

    @classmethod
    def from_bounds(cls, grid: Grid2D, x_lo, x_hi, y_lo, y_hi) -> "IndexBox":
        """Smallest box containing every node inside the closed rectangle."""
        ix = np.flatnonzero((grid.x_nodes >= x_lo) & (grid.x_nodes <= x_hi))
        iy = np.flatnonzero((grid.y_nodes >= y_lo) & (grid.y_nodes <= y_hi))
        if not ix.size or not iy.size:
            raise InvalidArgument("rectangle contains no grid nodes")
        return cls(int(ix[0]), int(ix[-1]) + 1, int(iy[0]), int(iy[-1]) + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.i1 - self.i0, self.j1 - self.j0)

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.i0, self.i1), slice(self.j0, self.j1)

    def check(self, grid: Grid2D):
        if not (0 <= self.i0 < self.i1 <= grid.nx and 0 <= self.j0 < self.j1 <= grid.ny):
            raise InvalidArgument(f"index box {self} out of range for grid {grid.shape}")
        if self.i1 - self.i0 < 2 or self.j1 - self.j0 < 2:
            raise InvalidArgument(f"index box {self} must span at least 2x2 nodes")


def restrict(f: GridField2D, box: IndexBox) -> GridField2D:
    box.check(f.grid)
    sx, sy = box.slices
    return GridField2D(f.grid.subgrid(sx, sy), f.values[sx, sy])


def zero_extend(f: GridField2D, target: Grid2D, box: IndexBox) -> GridField2D:
    box.check(target)
    if f.values.shape != box.shape:
        raise InvalidArgument(f"field shape {f.values.shape} does not fit box {box.shape}")
    out = np.zeros(target.shape)
    out[box.slices] = f.values
    return GridField2D(target, out)
