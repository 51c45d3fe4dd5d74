"""Bivariate Gaussian mixtures with closed-form conditional kernels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidArgument
from .grid import Grid2D, GridDensity2D, KernelField

LOG_2PI = np.log(2.0 * np.pi)
N_PARAM_COLUMNS = 6  # w, mu_x, mu_y, sigma_x, sigma_y, xi


def _vec(a) -> np.ndarray:
    a = np.atleast_1d(np.array(a, dtype=np.float64))
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """K-component mixture; component k has covariance
    [[sx^2, xi*sx*sy], [xi*sx*sy, sy^2]]."""

    weights: np.ndarray
    mu_x: np.ndarray
    mu_y: np.ndarray
    sigma_x: np.ndarray
    sigma_y: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        cols = [_vec(getattr(self, n)) for n in self._names()]
        K = cols[0].size
        if K < 1 or any(c.shape != (K,) for c in cols):
            raise InvalidArgument("mixture parameter vectors must share length K >= 1")
        for name, c in zip(self._names(), cols):
            if not np.all(np.isfinite(c)):
                raise InvalidArgument(f"{name} must be finite")
            object.__setattr__(self, name, c)
        w = self.weights
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"weights must lie on the simplex, got {w}")
        if np.any(self.sigma_x <= 0) or np.any(self.sigma_y <= 0):
            raise InvalidArgument("standard deviations must be positive")
        if np.any(np.abs(self.xi) >= 1):
            raise InvalidArgument("correlations must satisfy |xi| < 1")

    @staticmethod
    def _names():
        return ("weights", "mu_x", "mu_y", "sigma_x", "sigma_y", "xi")

    @property
    def K(self) -> int:
        return self.weights.size

    def as_array(self) -> np.ndarray:
        """(K, 6) block in column order w, mu_x, mu_y, sigma_x, sigma_y, xi."""
        return np.stack([getattr(self, n) for n in self._names()], axis=1)

    @classmethod
    def from_array(cls, block) -> "MixtureParams":
        block = np.asarray(block, dtype=np.float64).reshape(-1, N_PARAM_COLUMNS)
        return cls(*block.T)

    def permuted(self, perm) -> "MixtureParams":
        return MixtureParams.from_array(self.as_array()[np.asarray(perm)])

    def __eq__(self, other):
        if not isinstance(other, MixtureParams):
            return NotImplemented
        return np.array_equal(self.as_array(), other.as_array())

    @classmethod
    def single(cls, mu_x=0.0, mu_y=0.0, sigma_x=1.0, sigma_y=1.0, xi=0.0) -> "MixtureParams":
        return cls([1.0], [mu_x], [mu_y], [sigma_x], [sigma_y], [xi])


@dataclass(frozen=True)
class ParamRanges:
    mean_range: tuple[float, float] = (-3.0, 3.0)
    sigma_range: tuple[float, float] = (0.3, 1.2)
    corr_range: tuple[float, float] = (-0.7, 0.7)

    def __post_init__(self):
        for name in ("mean_range", "sigma_range", "corr_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidArgument(f"{name} is empty: ({lo}, {hi})")
        if self.sigma_range[0] <= 0:
            raise InvalidArgument("sigma_range must be positive")
        if self.corr_range[0] <= -1 or self.corr_range[1] >= 1:
            raise InvalidArgument("corr_range must lie inside (-1, 1)")


def _normal_logpdf(t, mean, std):
    z = (t - mean) / std
    return -0.5 * z * z - np.log(std) - 0.5 * LOG_2PI


def _component_axis(p: MixtureParams, x, y):
    x = np.asarray(x, dtype=np.float64)[..., None]
    y = np.asarray(y, dtype=np.float64)[..., None]
    return x, y


def gmm_joint_logpdf(p: MixtureParams, x, y) -> np.ndarray:
    x, y = _component_axis(p, x, y)
    zx = (x - p.mu_x) / p.sigma_x
    zy = (y - p.mu_y) / p.sigma_y
    one_m = 1.0 - p.xi ** 2
    quad = (zx * zx - 2.0 * p.xi * zx * zy + zy * zy) / one_m
    logn = -0.5 * quad - np.log(p.sigma_x * p.sigma_y) - 0.5 * np.log(one_m) - LOG_2PI
    with np.errstate(divide="ignore"):
        return logsumexp(logn + np.log(p.weights), axis=-1)


def gmm_joint_pdf(p: MixtureParams, x, y):
    return np.exp(gmm_joint_logpdf(p, x, y))


def _log_weighted_y(p: MixtureParams, y):
    with np.errstate(divide="ignore"):
        return np.log(p.weights) + _normal_logpdf(y, p.mu_y, p.sigma_y)


def gmm_marginal_y(p: MixtureParams, y):
    y = np.asarray(y, dtype=np.float64)[..., None]
    return np.exp(logsumexp(_log_weighted_y(p, y), axis=-1))


def responsibilities(p: MixtureParams, y) -> np.ndarray:
    """Posterior component weights given the query, shape (..., K)."""
    y = np.asarray(y, dtype=np.float64)[..., None]
    lw = _log_weighted_y(p, y)
    return np.exp(lw - logsumexp(lw, axis=-1, keepdims=True))


def conditional_moments(p: MixtureParams, y):
    """Per-component conditional mean and std of x given y, shapes (..., K)."""
    y = np.asarray(y, dtype=np.float64)[..., None]
    mean = p.mu_x + p.xi * (p.sigma_x / p.sigma_y) * (y - p.mu_y)
    std = p.sigma_x * np.sqrt(1.0 - p.xi ** 2)
    return mean, np.broadcast_to(std, mean.shape)


def gmm_conditional_logpdf(p: MixtureParams, x, y):
    x, yy = _component_axis(p, x, y)
    lw = _log_weighted_y(p, yy)
    lw = lw - logsumexp(lw, axis=-1, keepdims=True)
    mean, std = conditional_moments(p, y)
    return logsumexp(lw + _normal_logpdf(x, mean, std), axis=-1)


def gmm_conditional_pdf(p: MixtureParams, x, y):
    return np.exp(gmm_conditional_logpdf(p, x, y))


def sample_params(K: int, ranges: ParamRanges, rng: np.random.Generator) -> MixtureParams:
    """Draw order: weights, mu_x, mu_y, sigma_x, sigma_y, xi (K each)."""
    if K < 1:
        raise InvalidArgument("K must be >= 1")
    e = rng.standard_exponential(K)
    weights = e / e.sum()
    mu_x = rng.uniform(*ranges.mean_range, size=K)
    mu_y = rng.uniform(*ranges.mean_range, size=K)
    sigma_x = rng.uniform(*ranges.sigma_range, size=K)
    sigma_y = rng.uniform(*ranges.sigma_range, size=K)
    xi = rng.uniform(*ranges.corr_range, size=K)
    return MixtureParams(weights, mu_x, mu_y, sigma_x, sigma_y, xi)


def sample_points(p: MixtureParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """(n, 2) array of (x, y) draws."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    k = rng.choice(p.K, size=n, p=p.weights) if p.K > 1 else np.zeros(n, dtype=np.intp)
    z = rng.standard_normal((n, 2))
    sx, sy, xi = p.sigma_x[k], p.sigma_y[k], p.xi[k]
    x = p.mu_x[k] + sx * z[:, 0]
    y = p.mu_y[k] + sy * (xi * z[:, 0] + np.sqrt(1.0 - xi ** 2) * z[:, 1])
    return np.column_stack([x, y])


def render_joint(p: MixtureParams, grid: Grid2D) -> GridDensity2D:
    X, Y = grid.mesh()
    return GridDensity2D.normalized(grid, gmm_joint_pdf(p, X, Y))


def render_kernel(p: MixtureParams, grid: Grid2D) -> KernelField:
    X, Y = grid.mesh()
    logk = gmm_conditional_logpdf(p, X, Y)
    # shift per column before exponentiating: far-tail slices would underflow to 0
    k = np.exp(logk - logk.max(axis=0, keepdims=True))
    return KernelField(grid, k / (grid.wx @ k))


def render_pair(p: MixtureParams, grid: Grid2D) -> tuple[GridDensity2D, KernelField]:
    return render_joint(p, grid), render_kernel(p, grid)
