"""Product-Gaussian KDE on the grid and the plug-in conditional estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSample, InvalidArgument
from .grid import Grid2D, GridDensity2D, KernelField

KDE_DIM = 2
DEFAULT_DELTA_FLOOR = 1e-6


def silverman_bandwidth(samples, axis: int) -> float:
    """Per-axis rule of thumb  h = std * (4 / ((d + 2) n)) ** (1 / (d + 4)),  d = 2."""
    s = np.asarray(samples, dtype=np.float64)
    n = s.shape[0]
    if n < 2:
        raise DegenerateSample(f"need at least 2 samples for a bandwidth, got {n}")
    std = float(np.std(s[:, axis], ddof=1))
    if not std > 0:
        raise DegenerateSample(f"zero sample variance along axis {axis}")
    return std * (4.0 / ((KDE_DIM + 2) * n)) ** (1.0 / (KDE_DIM + 4))


@dataclass(frozen=True, eq=False)
class KdeSpec:
    samples: np.ndarray
    bandwidth_x: float
    bandwidth_y: float

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != 2 or s.shape[0] < 2:
            raise InvalidArgument("KDE needs an (n >= 2, 2) sample array")
        if not (self.bandwidth_x > 0 and self.bandwidth_y > 0):
            raise InvalidArgument("bandwidths must be positive")
        object.__setattr__(self, "samples", s)

    @classmethod
    def silverman(cls, samples) -> "KdeSpec":
        s = np.asarray(samples, dtype=np.float64)
        return cls(s, silverman_bandwidth(s, 0), silverman_bandwidth(s, 1))


def _axis_kernel(nodes, centers, h):
    d = (nodes[:, None] - centers[None, :]) / h
    return np.exp(-0.5 * d * d) / (h * np.sqrt(2.0 * np.pi))


def kde_values(spec: KdeSpec, grid: Grid2D) -> np.ndarray:
    """Raw (unnormalized on the grid) KDE values at the nodes."""
    kx = _axis_kernel(grid.x_nodes, spec.samples[:, 0], spec.bandwidth_x)
    ky = _axis_kernel(grid.y_nodes, spec.samples[:, 1], spec.bandwidth_y)
    return (kx @ ky.T) / spec.samples.shape[0]


def kde_density(spec: KdeSpec, grid: Grid2D) -> GridDensity2D:
    return GridDensity2D.normalized(grid, kde_values(spec, grid))


@dataclass(frozen=True, eq=False)
class PluginEstimate:
    kernel: KernelField
    flagged: np.ndarray  # y indices whose marginal fell below the floor
    marginal: np.ndarray


def plugin_conditional(rho_hat: GridDensity2D, delta_floor: float = DEFAULT_DELTA_FLOOR) -> PluginEstimate:
    """Divide the joint by its trapezoid marginal, flooring small marginals.

    Floored columns are rescaled to unit x-mass; a column with no mass at
    all falls back to the uniform density on D.
    """
    if not delta_floor > 0:
        raise InvalidArgument("delta_floor must be positive")
    grid = rho_hat.grid
    v = rho_hat.values
    marg = grid.wx @ v
    low = marg < delta_floor
    k = v / np.maximum(marg, delta_floor)
    if np.any(low):
        # rescale by the column max first: far-tail columns can be subnormal
        cols = k[:, low]
        peak = cols.max(axis=0)
        cols = cols / np.where(peak > 0, peak, 1.0)
        mass = grid.wx @ cols
        dead = mass <= 0
        cols = np.where(dead, 1.0 / grid.x_length, cols / np.where(dead, 1.0, mass))
        k[:, low] = cols
    return PluginEstimate(KernelField(grid, k), np.flatnonzero(low), marg)
