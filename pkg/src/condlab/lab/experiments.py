"""Experiment drivers shared by scripts/ and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from ..condition import kernel_condition
from ..estimator import KdeSpec, kde_density, plugin_conditional
from ..grid import Grid2D, GridDensity2D, delta_of, make_grid
from ..mixture import (
    MixtureParams,
    conditional_moments,
    gmm_conditional_pdf,
    render_joint,
    render_kernel,
    sample_points,
)
from ..nop.model import NOModel, relative_l1_per_record
from ..nop.train import EvalStats, History, evaluate, train
from .config import ExperimentConfig, family_tag, profile_config
from .formats import Dataset
from .generate import generate, record_rng


def kernel_errors(grid: Grid2D, pred: np.ndarray, targets: np.ndarray) -> np.ndarray:
    return relative_l1_per_record(pred, targets, np.outer(grid.wx, grid.wy))


def plugin_errors(ds: Dataset, delta_floor: float) -> tuple[np.ndarray, int]:
    """Per-record plug-in error, plus how many records needed the floor."""
    grid = ds.header.grid
    errs, flagged = [], 0
    for i in range(len(ds)):
        est = plugin_conditional(GridDensity2D(grid, ds.joints[i]), delta_floor)
        flagged += int(est.flagged.size > 0)
        errs.append(kernel_errors(grid, est.kernel.values[None], ds.kernels[i][None])[0])
    return np.array(errs), flagged


@dataclass
class ClosedFormError:
    n: int
    sup: float  # against the conditional on the whole line
    quadrature: float  # against the same conditional renormalized to the x-box


def closed_form_errors(sizes=(64, 128, 256), xi: float = 0.5) -> list[ClosedFormError]:
    """Discrete conditioning of a correlated Gaussian against its analytic conditional.

    The grid kernel integrates to one over the x-box, so it differs from the
    whole-line conditional by the lost tail mass; that part does not shrink
    with h.  The box-renormalized reference isolates the quadrature error.
    """
    p = MixtureParams.single(xi=xi)
    out = []
    for n in sizes:
        g = make_grid(-6, 6, n, -6, 6, n)
        rho = render_joint(p, g)
        k = kernel_condition(rho, delta_of(rho)).values
        X, Y = g.mesh()
        exact = gmm_conditional_pdf(p, X, Y)
        mean, std = (a[:, 0] for a in conditional_moments(p, g.y_nodes))
        mass = norm.cdf((g.x_max - mean) / std) - norm.cdf((g.x_min - mean) / std)
        out.append(ClosedFormError(n, float(np.max(np.abs(k - exact))),
                                   float(np.max(np.abs(k - exact / mass)))))
    return out


def desk_datasets(cfg: ExperimentConfig, threads: int = 0) -> dict[str, Dataset]:
    d = cfg.data
    tag = family_tag(replace(d, family="gmm"))
    plan = {"train": (d.seed_train, d.n_train), "val": (d.seed_val, d.n_val),
            "test": (d.seed_test, d.n_test)}
    return {k: generate(tag, d.K, d.ranges(), d.grid(), s, n, threads=threads)
            for k, (s, n) in plan.items()}


@dataclass
class TrainRun:
    model: NOModel
    history: History
    test: EvalStats
    seconds: float

    @property
    def epochs(self) -> int:
        return len(self.history.epoch)


def train_run(cfg: ExperimentConfig | None = None, data: dict | None = None, log=None) -> TrainRun:
    cfg = cfg or profile_config("desk")
    data = data or desk_datasets(cfg)
    model = NOModel.from_config(cfg.model, cfg.data.grid(), seed=cfg.train.seed)
    t0 = time.perf_counter()
    best, hist = train(cfg.train, model, data["train"].arrays(), data["val"].arrays(), log)
    return TrainRun(best, hist, evaluate(best, data["test"].arrays()), time.perf_counter() - t0)


def overfit_subset(cfg: ExperimentConfig | None = None, n: int = 10, epochs: int = 1500,
                   lr: float = 3e-3) -> EvalStats:
    """Full-batch training on the first ``n`` training records, scored on the same records."""
    cfg = cfg or profile_config("desk")
    d = cfg.data
    sub = generate(family_tag(replace(d, family="gmm")), d.K, d.ranges(), d.grid(), d.seed_train, n).arrays()
    model = NOModel.from_config(cfg.model, d.grid(), seed=cfg.train.seed)
    tcfg = replace(cfg.train, lr=lr, batch_size=n, max_epochs=epochs, patience=20, early_stop=0)
    best, _ = train(tcfg, model, sub)
    return evaluate(best, sub)


def kde_plugin_medians(params: MixtureParams, grid: Grid2D, sizes=(500, 2000, 20000),
                       instances: int = 50, seed: int = 2, delta_floor: float = 1e-6) -> dict[int, float]:
    """Median plug-in error over independent sample draws for each sample size.

    Draw i uses record stream (seed, i) at every size.
    """
    truth = render_kernel(params, grid).values[None]
    out = {}
    for n in sizes:
        errs = []
        for i in range(instances):
            pts = sample_points(params, n, record_rng(seed, i))
            est = plugin_conditional(kde_density(KdeSpec.silverman(pts), grid), delta_floor)
            errs.append(kernel_errors(grid, est.kernel.values[None], truth)[0])
        out[n] = float(np.median(errs))
    return out


@dataclass
class Amortization:
    plugin: np.ndarray
    model: np.ndarray
    flagged: int

    @property
    def plugin_median(self) -> float:
        return float(np.median(self.plugin))

    @property
    def model_median(self) -> float:
        return float(np.median(self.model))


def amortization_check(model: NOModel, cfg: ExperimentConfig | None = None,
                       threads: int = 0) -> Amortization:
    """Trained model against plug-in conditioning on the same KDE joints."""
    cfg = cfg or profile_config("desk")
    d = cfg.data
    ds = generate("kde", d.K, d.ranges(), model.grid, d.kde_seed, d.kde_records, d.kde_samples, threads)
    plug, flagged = plugin_errors(ds, cfg.eval.delta_floor)
    learned = evaluate(model, ds.arrays(), threads=threads).errors
    return Amortization(plug, learned, flagged)
