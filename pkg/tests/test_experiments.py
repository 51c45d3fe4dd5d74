import numpy as np
import pytest

from condlab.grid import make_grid
from condlab.lab.config import DataConfig, ExperimentConfig
from condlab.lab.experiments import (
    amortization_check,
    closed_form_errors,
    desk_datasets,
    kde_plugin_medians,
    kernel_errors,
    overfit_subset,
    plugin_errors,
    train_run,
)
from condlab.lab.generate import generate
from condlab.mixture import MixtureParams, ParamRanges
from condlab.nop import ModelConfig, TrainConfig, identity_model


def tiny(**train):
    return ExperimentConfig(
        "desk",
        data=DataConfig(n_train=6, n_val=3, n_test=3, nx=12, ny=12, kde_records=4, kde_samples=200),
        model=ModelConfig(width=4, depth=1, modes=2, proj_hidden=(4,)),
        train=TrainConfig(batch_size=3, max_epochs=2, **train),
    )


def test_closed_form_quadrature_is_second_order():
    errs = closed_form_errors((32, 64))
    assert errs[0].quadrature / errs[1].quadrature == pytest.approx(4, rel=0.05)
    # the box truncation floor dominates the whole-line comparison
    assert errs[1].sup > 10 * errs[1].quadrature


def test_desk_datasets_use_split_seeds():
    cfg = tiny()
    data = desk_datasets(cfg)
    assert [len(data[k]) for k in ("train", "val", "test")] == [6, 3, 3]
    assert [data[k].header.seed for k in ("train", "val", "test")] == [0, 1, 2]
    assert data["train"].header.family == "gmm_k1"


def test_train_run_records_history():
    run = train_run(tiny())
    assert run.epochs == 2 and len(run.test.errors) == 3
    assert np.all(np.isfinite(run.test.errors))


def test_overfit_improves_on_init():
    cfg = tiny()
    before = overfit_subset(cfg, n=3, epochs=1, lr=1e-9).median
    after = overfit_subset(cfg, n=3, epochs=40).median
    assert after < before


def test_kde_medians_shrink_with_samples():
    g = make_grid(-6, 6, 24, -6, 6, 24)
    med = kde_plugin_medians(MixtureParams.single(xi=0.5), g, sizes=(100, 10000), instances=5)
    assert med[10000] < med[100]


def test_plugin_errors_zero_on_exact_joints():
    ds = generate("gmm_k1", 1, ParamRanges(), make_grid(-6, 6, 16, -6, 6, 16), 0, 3)
    errs, flagged = plugin_errors(ds, 1e-300)
    assert np.all(errs < 1e-12) and flagged == 0


def test_amortization_scores_model_on_kde_joints():
    cfg = tiny()
    g = cfg.data.grid()
    am = amortization_check(identity_model(g), cfg)
    d = cfg.data
    ds = generate("kde", d.K, d.ranges(), g, d.kde_seed, d.kde_records, d.kde_samples)
    # the identity model echoes the KDE joint, so its score is the joint-vs-kernel error
    assert np.allclose(am.model, kernel_errors(g, ds.joints, ds.kernels), rtol=1e-12)
    assert np.array_equal(am.plugin, plugin_errors(ds, cfg.eval.delta_floor)[0])
