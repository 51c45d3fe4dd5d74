"""Dataset generation with one RNG stream per record.

Record i of a set with seed s draws everything from
Philox(SeedSequence(s, spawn_key=(i,))), so records can be generated in any
order, in parallel, or one at a time and still match byte for byte.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..errors import DegenerateSample
from ..estimator import KdeSpec, kde_density
from ..grid import Grid2D
from ..mixture import ParamRanges, render_joint, render_kernel, sample_params, sample_points
from .formats import Dataset, DatasetHeader


def record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


def make_record(family: str, K: int, ranges: ParamRanges, grid: Grid2D, seed: int, index: int,
                n_samples: int = 0):
    """(params block, joint values, kernel values) for one record.

    For ``family="kde"`` the joint is the KDE of ``n_samples`` draws and the
    kernel is the analytic conditional of the generating mixture.
    """
    rng = record_rng(seed, index)
    p = sample_params(K, ranges, rng)
    kernel = render_kernel(p, grid).values
    if family == "kde":
        pts = sample_points(p, n_samples, rng) if n_samples >= 1 else np.zeros((0, 2))
        try:
            joint = kde_density(KdeSpec.silverman(pts), grid).values
        except DegenerateSample as exc:
            raise DegenerateSample(f"record {index}: {exc}") from exc
    else:
        joint = render_joint(p, grid).values
    return p.as_array(), joint, kernel


def _family_kind(tag: str) -> str:
    return "kde" if tag == "kde" else "gmm"


def generate(tag: str, K: int, ranges: ParamRanges, grid: Grid2D, seed: int, n: int,
             n_samples: int = 0, threads: int = 0) -> Dataset:
    header = DatasetHeader(tag, K, seed, grid, n, n_samples if tag == "kde" else 0, ranges)
    kind = _family_kind(tag)

    def one(i):
        return make_record(kind, K, ranges, grid, seed, i, n_samples)

    if threads:
        with ThreadPoolExecutor(threads) as pool:
            recs = list(pool.map(one, range(n)))
    else:
        recs = [one(i) for i in range(n)]
    params = np.array([r[0] for r in recs]).reshape(n, K, -1)
    joints = np.array([r[1] for r in recs]).reshape(n, *grid.shape)
    kernels = np.array([r[2] for r in recs]).reshape(n, *grid.shape)
    return Dataset(header, params, joints, kernels)


def regenerate_record(header: DatasetHeader, index: int) -> bytes:
    """Bytes of record ``index`` recomputed from the header alone."""
    params, joint, kernel = make_record(_family_kind(header.family), header.K, header.ranges,
                                        header.grid, header.seed, index, header.n_samples)
    from .formats import _record_block
    return _record_block(params, joint, kernel)
