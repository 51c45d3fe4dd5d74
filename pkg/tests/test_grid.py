import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf
from scipy.stats import norm

from condlab.errors import GridMismatch, InvalidArgument
from condlab.grid import (
    GridDensity1D,
    GridDensity2D,
    GridField2D,
    delta_of,
    integrate2d,
    l1_distance,
    make_grid,
    marginal_y,
    sup_distance,
    trapezoid_weights,
)
from condlab.mixture import MixtureParams, render_joint

G64 = make_grid(-6, 6, 64, -6, 6, 64)


def uniform(grid):
    return GridDensity2D(grid, np.full(grid.shape, 1.0 / (grid.x_length * grid.y_length)))


def test_make_grid_full_scale_shape():
    g = make_grid(-6, 6, 64, -6, 6, 64)
    assert g.shape == (64, 64)
    assert g.x_nodes[0] == -6 and g.x_nodes[-1] == 6


def test_two_point_grid():
    g = make_grid(0, 1, 2, 0, 1, 2)
    assert g.hx == 1 and g.hy == 1
    assert list(g.x_nodes) == [0.0, 1.0]


def test_spacing_arithmetic():
    assert make_grid(-6, 6, 33, -6, 6, 33).hx == 0.375


@pytest.mark.parametrize("args", [(1, 0, 4, 0, 1, 4), (0, 1, 1, 0, 1, 4), (0, 1, 4, 0, 0, 4),
                                  (0, np.inf, 4, 0, 1, 4), (0, 1, 2.5, 0, 1, 4)])
def test_make_grid_rejects(args):
    with pytest.raises(InvalidArgument):
        make_grid(*args)


def test_nodes_uniform():
    d = np.diff(G64.x_nodes)
    assert np.all(d > 0)
    assert np.max(np.abs(d / G64.hx - 1)) < 1e-12


def test_grid_equality_by_value():
    assert make_grid(-6, 6, 8, -6, 6, 8) == make_grid(-6.0, 6.0, 8, -6.0, 6.0, 8)
    assert hash(make_grid(-6, 6, 8, -6, 6, 8)) == hash(make_grid(-6, 6, 8, -6, 6, 8))
    assert make_grid(-6, 6, 8, -6, 6, 8) != make_grid(-6, 6, 9, -6, 6, 8)


def test_integrate_constant():
    assert integrate2d(uniform(G64)) == pytest.approx(1.0, abs=1e-14)


def test_integrate_odd_function():
    f = GridField2D.from_function(G64, lambda x, y: x)
    assert abs(integrate2d(f)) < 1e-12


def test_integrate_standard_normal_vs_erf():
    vals = norm.pdf(G64.x_nodes)[:, None] * norm.pdf(G64.y_nodes)[None, :]
    exact = erf(6 / np.sqrt(2)) ** 2
    assert integrate2d(GridField2D(G64, vals)) == pytest.approx(exact, abs=1e-6)


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3),
       st.integers(2, 20), st.integers(2, 20))
def test_trapezoid_exact_for_bilinear(a, b, c, d, nx, ny):
    g = make_grid(-1, 2, nx, 0, 3, ny)
    f = GridField2D.from_function(g, lambda x, y: a + b * x + c * y + d * x * y)
    # closed form over [-1, 2] x [0, 3]
    exact = a * 9 + b * 1.5 * 3 + c * 3 * 4.5 + d * 1.5 * 4.5
    assert integrate2d(f) == pytest.approx(exact, rel=1e-12, abs=1e-11)


def test_density_validation():
    with pytest.raises(InvalidArgument):
        GridDensity2D(G64, np.full(G64.shape, 1.0))
    bad = np.full(G64.shape, 1 / 144)
    bad[3, 3] = -1e-3
    with pytest.raises(InvalidArgument):
        GridDensity2D(G64, bad)
    with pytest.raises(InvalidArgument):
        GridField2D(G64, np.full((3, 3), 1.0))
    nan = np.zeros(G64.shape)
    nan[0, 0] = np.nan
    with pytest.raises(InvalidArgument):
        GridField2D(G64, nan)


def test_fields_are_immutable():
    f = uniform(G64)
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0


def test_marginal_uniform():
    m = marginal_y(uniform(G64))
    assert np.allclose(m.values, 1 / 12, rtol=0, atol=1e-15)


def test_marginal_product():
    f = np.exp(-G64.x_nodes ** 2)
    g = 1 + np.cos(G64.y_nodes) ** 2
    rho = GridDensity2D.normalized(G64, np.outer(f, g))
    scale = 1.0 / integrate2d(GridField2D(G64, np.outer(f, g)))
    expect = g * (G64.wx @ f) * scale
    assert np.allclose(marginal_y(rho).values, expect, rtol=1e-12, atol=0)


def test_marginal_standard_normal():
    rho = render_joint(MixtureParams.single(), G64)
    assert np.max(np.abs(marginal_y(rho).values - norm.pdf(G64.y_nodes))) < 1e-6


def test_marginal_integrates_to_total_exactly():
    rho = render_joint(MixtureParams.single(0.3, -1, 0.8, 1.1, 0.4), G64)
    m = marginal_y(rho)
    assert float(G64.wy @ m.values) == integrate2d(rho)


def test_delta_examples():
    assert delta_of(uniform(G64)) == pytest.approx(1 / 12, rel=1e-14)
    rho = render_joint(MixtureParams.single(), G64)
    assert delta_of(rho) == pytest.approx(norm.pdf(6.0), rel=1e-3)
    v = np.full(G64.shape, 1.0)
    v[:, -1] = 0.0
    assert delta_of(GridDensity2D.normalized(G64, v)) == 0.0


def test_distances_examples():
    u = uniform(G64)
    zero = GridField2D(G64, np.zeros(G64.shape))
    assert sup_distance(u, u) == 0 and l1_distance(u, u) == 0
    assert sup_distance(zero, u) == pytest.approx(1 / 144, rel=1e-14)
    assert l1_distance(zero, u) == pytest.approx(1.0, rel=1e-14)


def test_distances_mean_shift():
    a = render_joint(MixtureParams.single(0.0), G64)
    b = render_joint(MixtureParams.single(0.1), G64)
    d = np.abs(a.values - b.values)
    l1 = sum(G64.wx[i] * G64.wy[j] * d[i, j] for i in range(64) for j in range(64))
    assert sup_distance(a, b) == pytest.approx(d.max(), abs=1e-10) and sup_distance(a, b) > 0
    assert l1_distance(a, b) == pytest.approx(l1, abs=1e-10) and l1 > 0


def test_distance_grid_mismatch():
    with pytest.raises(GridMismatch):
        sup_distance(uniform(G64), uniform(make_grid(-6, 6, 32, -6, 6, 32)))
    with pytest.raises(InvalidArgument):
        l1_distance(uniform(G64), uniform(make_grid(-6, 6, 32, -6, 6, 32)))


fields = st.integers(0, 2 ** 32 - 1).map(
    lambda s: GridField2D(make_grid(-1, 1, 6, -1, 1, 5), np.random.default_rng(s).normal(size=(6, 5))))


@given(fields, fields, fields)
def test_distances_are_metrics(f, g, h):
    for dist in (sup_distance, l1_distance):
        assert dist(f, g) == dist(g, f)
        assert dist(f, h) <= dist(f, g) + dist(g, h) + 1e-12
        assert dist(f, g) >= 0


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=30)
def test_delta_below_every_marginal(seed):
    v = np.random.default_rng(seed).random((7, 9))
    rho = GridDensity2D.normalized(make_grid(-2, 2, 7, 0, 1, 9), v)
    assert np.all(delta_of(rho) <= marginal_y(rho).values)


def test_trapezoid_weights_sum():
    w = trapezoid_weights(11, 0.5)
    assert w.sum() == pytest.approx(5.0, rel=1e-15)
    assert G64.wx.sum() == pytest.approx(G64.x_length, rel=1e-14)


def test_density1d_checks():
    x = np.linspace(0, 1, 11)
    GridDensity1D(x, np.ones(11))
    with pytest.raises(InvalidArgument):
        GridDensity1D(x, 2 * np.ones(11))
