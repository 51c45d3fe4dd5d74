import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import erf

from condlab.condition import IndexBox, truncate_tm
from condlab.errors import GridMismatch, InvalidArgument, NonFiniteError
from condlab.grid import GridField2D, make_grid
from condlab.nop import (
    AdamState,
    ArrayDataset,
    Batch,
    FourierBasis,
    FullNOSpec,
    HiddenLayer,
    LayerSpec,
    ModelConfig,
    NOModel,
    PlateauScheduler,
    PointwiseMLP,
    TrainConfig,
    adam_step,
    evaluate,
    fullno_forward,
    grad,
    identity_model,
    loss_and_grad,
    relative_l1_loss,
    relative_l1_per_record,
    train,
)
from condlab.nop.layers import act_backward, act_forward
from condlab.nop.model import batch_loss

G16 = make_grid(-6, 6, 16, -6, 6, 16)
seeds = st.integers(0, 2 ** 32 - 1)


def rng(seed=0):
    return np.random.default_rng(seed)


def gelu(z):
    return 0.5 * z * (1 + erf(z / np.sqrt(2)))


# -- activations --------------------------------------------------------------

@pytest.mark.parametrize("name", ["relu", "gelu", "gelu_tanh", "identity"])
def test_activation_derivatives(name):
    z = np.linspace(-4, 4, 101) + 0.013
    h = 1e-6
    fd = (act_forward(name, z + h) - act_forward(name, z - h)) / (2 * h)
    _, aux = act_forward(name, z, True)
    assert np.allclose(act_backward(name, z, np.ones_like(z), aux), fd, atol=1e-8)
    assert np.array_equal(act_backward(name, z, np.ones_like(z)), act_backward(name, z, np.ones_like(z), aux))


def test_relu_subgradient_at_zero():
    assert act_backward("relu", np.zeros(3), np.ones(3)).tolist() == [0, 0, 0]


def test_gelu_tanh_close_to_erf():
    z = np.linspace(-5, 5, 201)
    assert np.max(np.abs(act_forward("gelu", z) - act_forward("gelu_tanh", z))) < 1e-3


# -- pointwise nets -----------------------------------------------------------

def test_pointwise_identity_passthrough():
    net = PointwiseMLP("lift", (3, 3), "identity")
    params = {"lift.W0": np.eye(3), "lift.b0": np.zeros(3)}
    x = rng(0).normal(size=(2, 5, 4, 3))
    assert np.array_equal(net.forward(params, x)[0], x)


def test_pointwise_nodewise_oracle():
    net = PointwiseMLP("q", (4, 7, 5, 2), "gelu")
    params = net.init(np.random.default_rng(1))
    x = rng(2).normal(size=(2, 6, 5, 4))
    out, _ = net.forward(params, x)
    for b, i, j in [(0, 0, 0), (1, 5, 4), (0, 3, 2), (1, 2, 1)]:
        h = x[b, i, j]
        for k in range(3):
            s = [sum(h[a] * params[f"q.W{k}"][a, c] for a in range(h.size)) + params[f"q.b{k}"][c]
                 for c in range(params[f"q.W{k}"].shape[1])]
            h = np.array([gelu(v) for v in s]) if k < 2 else np.array(s)
        assert np.max(np.abs(out[b, i, j] - h)) < 1e-12


def test_lifting_depends_only_on_coordinates():
    cfg = ModelConfig(width=4, depth=1, modes=2, input_norm="none", proj_hidden=())
    m = NOModel.from_config(cfg, G16, seed=3)
    p = dict(m.params)
    p["lift.W0"] = p["lift.W0"].copy()
    p["lift.W0"][0] = 0.0  # value channel
    a = rng(0).random((1, 16, 16))
    b = rng(1).random((1, 16, 16))
    ha = m._mods[0].forward(p, np.concatenate([a[..., None], m.coords[None]], -1))[0]
    hb = m._mods[0].forward(p, np.concatenate([b[..., None], m.coords[None]], -1))[0]
    assert np.array_equal(ha, hb)


def test_constant_projection_gives_constant_field():
    m = NOModel.from_config(ModelConfig(width=4, depth=2, modes=2, proj_hidden=()), G16, seed=0)
    p = dict(m.params)
    p["proj.W0"] = np.zeros_like(p["proj.W0"])
    p["proj.b0"] = np.array([0.25])
    out = m.predict(rng(0).random((2, 16, 16)), params=p)
    assert np.all(out == 0.25)


# -- hidden layers ------------------------------------------------------------

def fourier_layer(d_in, d_out, modes, grid=G16, act="identity"):
    return HiddenLayer("h", d_in, d_out, modes, act, "fourier", grid.shape)


def test_rank_zero_is_pointwise():
    layer = HiddenLayer("h", 3, 2, 0, "gelu", "fourier", G16.shape)
    p = layer.init(np.random.default_rng(0))
    f = rng(1).normal(size=(2, 16, 16, 3))
    out, _ = layer.forward(p, f)
    assert np.allclose(out, gelu(f @ p["h.W"] + p["h.b"]), rtol=1e-14, atol=1e-15)


def single_mode(kx, ky, n=16):
    i = np.arange(n)
    return np.cos(2 * np.pi * (kx * i[:, None] + ky * i[None, :]) / n)


def unit_multiplier_params(layer):
    p = {k: np.zeros(s) for k, s in layer.param_shapes().items()}
    p["h.T"][..., 0, 0, 0] = 1.0
    return p


@pytest.mark.parametrize("kx,ky", [(0, 0), (1, 0), (2, 3), (-3, 1), (3, 2)])
def test_retained_mode_reproduced(kx, ky):
    layer = fourier_layer(1, 1, 4)
    f = single_mode(kx, ky)[None, ..., None]
    out, _ = layer.forward(unit_multiplier_params(layer), f)
    # orthonormal pairing: projection onto a retained mode returns it unscaled
    assert np.max(np.abs(out - f)) < 1e-12


@pytest.mark.parametrize("kx,ky", [(5, 0), (0, 4), (6, 6)])
def test_dropped_mode_annihilated(kx, ky):
    layer = fourier_layer(1, 1, 4)
    f = single_mode(kx, ky)[None, ..., None]
    out, _ = layer.forward(unit_multiplier_params(layer), f)
    assert np.max(np.abs(out)) < 1e-12


def test_asymmetric_x_modes():
    # kx = -4 is retained but +4 is not, so a cosine keeps half its amplitude
    layer = fourier_layer(1, 1, 4)
    f = single_mode(4, 0)[None, ..., None]
    out, _ = layer.forward(unit_multiplier_params(layer), f)
    assert np.max(np.abs(out - 0.5 * f)) < 1e-12


def test_mode_pairing_matches_quadrature():
    basis = FourierBasis(16, 16, 4)
    f = rng(0).normal(size=(1, 16, 16, 1))
    c = basis.encode(f)[0, :, :, 0]
    i = np.arange(16)
    for a, kx in enumerate(basis.kx):
        for b, ky in enumerate(basis.ky):
            e = np.exp(-2j * np.pi * (kx * i[:, None] + ky * i[None, :]) / 16)
            assert abs(c[a, b] - np.sum(f[0, :, :, 0] * e) / 256) < 1e-13


def test_encode_decode_adjoints():
    basis = FourierBasis(12, 10, 3)
    r = rng(4)
    f = r.normal(size=(2, 12, 10, 3))
    g = r.normal(size=(2, 6, 3, 3)) + 1j * r.normal(size=(2, 6, 3, 3))
    lhs = np.sum(np.real(np.conj(basis.encode(f)) * g))
    rhs = np.sum(f * basis.encode_adjoint(g))
    assert lhs == pytest.approx(rhs, rel=1e-12)
    u = r.normal(size=(2, 12, 10, 3))
    lhs = np.sum(basis.decode(g) * u)
    rhs = np.sum(np.real(np.conj(g) * basis.decode_adjoint(u)))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_learned_rank_one_quadrature_oracle():
    g = make_grid(-1, 2, 7, 0, 1, 5)
    w2 = np.outer(g.wx, g.wy)
    layer = HiddenLayer("h", 2, 3, 1, "identity", "learned", g.shape, w2)
    p = layer.init(np.random.default_rng(2))
    p["h.W"] = np.zeros_like(p["h.W"])
    p["h.b"] = np.zeros_like(p["h.b"])
    f = rng(3).normal(size=(1, 7, 5, 2))
    out, _ = layer.forward(p, f)
    psi, phi, T = p["h.psi"][0], p["h.phi"][0], p["h.T"][0]
    pair = [sum(g.wx[i] * g.wy[j] * psi[i, j] * f[0, i, j, c] for i in range(7) for j in range(5))
            for c in range(2)]
    for o in range(3):
        coef = sum(pair[c] * T[c, o] for c in range(2))
        assert np.max(np.abs(out[0, :, :, o] - coef * phi)) < 1e-12


@given(seeds, st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_spectral_layer_is_linear(seed, c):
    layer = fourier_layer(3, 2, 4)
    r = np.random.default_rng(seed)
    p = layer.init(r)
    p["h.W"] = np.zeros_like(p["h.W"])
    p["h.b"] = np.zeros_like(p["h.b"])
    f, g = r.normal(size=(2, 1, 16, 16, 3))
    F = lambda u: layer.forward(p, u)[0]
    assert np.allclose(F(f + g), F(f) + F(g), rtol=0, atol=1e-12)
    assert np.allclose(F(c * f), c * F(f), rtol=0, atol=1e-12)


# -- model composition ----------------------------------------------------------

def test_layer_spec_validation():
    with pytest.raises(InvalidArgument):
        LayerSpec("dense", 4)
    with pytest.raises(InvalidArgument):
        LayerSpec("hidden", 0)
    with pytest.raises(InvalidArgument):
        LayerSpec("hidden", 4, -1)
    with pytest.raises(InvalidArgument):
        NOModel([LayerSpec("hidden", 2), LayerSpec("projection", 1)], G16)


def test_identity_model_reproduces_input():
    m = identity_model(G16)
    x = rng(0).random((3, 16, 16))
    assert np.array_equal(m.predict(x), x)


def test_identity_hidden_layers_reduce_to_pointwise_q_of_r():
    cfg = ModelConfig(width=3, depth=3, modes=2, input_norm="none", proj_hidden=(5,))
    m = NOModel.from_config(cfg, G16, seed=4)
    p = dict(m.params)
    for k in (1, 2, 3):
        p[f"hidden{k}.W"] = np.eye(3)
        p[f"hidden{k}.b"] = np.zeros(3)
        p[f"hidden{k}.T"] = np.zeros_like(p[f"hidden{k}.T"])
    m = NOModel([LayerSpec("lifting", 3, nonlinearity="gelu")]
                + [LayerSpec("hidden", 3, 2, "identity") for _ in range(3)]
                + [LayerSpec("projection", 1, nonlinearity="gelu", hidden=(5,))], G16, params=p)
    x = rng(1).random((2, 16, 16))
    lift, _ = m._mods[0].forward(p, np.concatenate([x[..., None], np.broadcast_to(m.coords, (2, 16, 16, 2))], -1))
    proj, _ = m._mods[-1].forward(p, np.concatenate([lift, np.broadcast_to(m.coords, (2, 16, 16, 2))], -1))
    assert np.max(np.abs(m.predict(x) - proj[..., 0])) < 1e-13


def test_max_normalization_is_scale_free():
    m = NOModel.from_config(ModelConfig(width=4, depth=2, modes=2, input_norm="max"), G16, seed=0)
    x = rng(0).random((2, 16, 16))
    assert np.allclose(m.predict(x), m.predict(37.5 * x), rtol=1e-12, atol=1e-14)


@given(seeds)
@settings(max_examples=10, deadline=None)
def test_column_normalization_respects_conditioning_invariance(seed):
    # kernels do not change under rho(x, y) -> c(y) rho(x, y)
    m = NOModel.from_config(ModelConfig(width=4, depth=2, modes=2), G16, seed=0)
    r = np.random.default_rng(seed)
    x = r.random((2, 16, 16))
    c = 2.0 ** r.integers(-40, 40, size=16)
    assert np.allclose(m.predict(x), m.predict(x * c), rtol=1e-12, atol=1e-14)


def test_column_normalization_keeps_zero_columns():
    from condlab.nop.model import normalize_inputs
    x = np.ones((1, 4, 3, 1))
    x[:, :, 1] = 0.0
    x[:, 0, 2] = 4.0
    out = normalize_inputs(x, "column_max")
    assert np.all(out[:, :, 1] == 0) and np.all(out[:, :, 0] == 1)
    assert out[0, :, 2, 0].tolist() == [1.0, 0.25, 0.25, 0.25]


def test_forward_deterministic_for_fixed_seed():
    cfg = ModelConfig(width=6, depth=2, modes=3)
    x = rng(5).random((2, 16, 16))
    a = NOModel.from_config(cfg, G16, seed=11).predict(x)
    b = NOModel.from_config(cfg, G16, seed=11).predict(x)
    c = NOModel.from_config(cfg, G16, seed=12).predict(x)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_grid_and_channel_mismatch():
    m = NOModel.from_config(ModelConfig(width=4, depth=1, modes=2), G16)
    with pytest.raises(GridMismatch):
        m.predict(np.ones((1, 8, 8)))
    with pytest.raises(InvalidArgument):
        m.predict(np.ones((1, 16, 16, 2)))
    with pytest.raises(GridMismatch):
        m.apply(GridField2D(make_grid(-6, 6, 8, -6, 6, 8), np.ones((8, 8))))


def test_flat_round_trip_and_description():
    m = NOModel.from_config(ModelConfig(width=5, depth=2, modes=3, query_channels=2), G16, seed=3)
    assert np.array_equal(m.flat(m.unflat(m.flat())), m.flat())
    assert m.flat().size == m.n_params()
    m2 = NOModel.from_description(m.describe(), m.unflat(m.flat()))
    x, q = rng(0).random((2, 16, 16)), np.array([0.5, -1.0])
    assert np.array_equal(m.predict(x, q), m2.predict(x, q))
    with pytest.raises(InvalidArgument):
        m.unflat(np.zeros(3))


# -- vec2fun and the augmented operator --------------------------------------

def augno(seed=0):
    cfg = ModelConfig(width=5, depth=2, modes=3, query_channels=3, query_hidden=(4,))
    return NOModel.from_config(cfg, G16, seed=seed)


def test_vec2fun_nodewise_product():
    m = augno(1)
    z = np.array([[0.3], [-2.0]])
    hx, _ = m._h.forward(m.params, m.coords)
    pz, _ = m._psi.forward(m.params, z)
    for b in range(2):
        for i, j in [(0, 0), (7, 3), (15, 15)]:
            assert np.allclose(hx[i, j] * pz[b], np.einsum("c,c->c", hx[i, j], pz[b]), rtol=1e-15)


def test_vec2fun_constant_lift():
    # h = 1 and psi = id give the constant field with value y
    h = PointwiseMLP("vec_h", (2, 1), "identity")
    psi = PointwiseMLP("vec_psi", (1, 1), "identity")
    p = {"vec_h.W0": np.zeros((2, 1)), "vec_h.b0": np.ones(1),
         "vec_psi.W0": np.ones((1, 1)), "vec_psi.b0": np.zeros(1)}
    m = NOModel.from_config(ModelConfig(width=2, depth=1, modes=2), G16)
    hx, _ = h.forward(p, m.coords)
    pz, _ = psi.forward(p, np.array([[1.75]]))
    assert np.all(hx * pz[0] == 1.75)


def test_augno_dead_query_path():
    m = augno(2)
    p = dict(m.params)
    for k in [k for k in p if k.startswith("vec_psi.")]:
        p[k] = np.zeros_like(p[k])
    x = rng(0).random((1, 16, 16))
    a = m.predict(x, np.array([-3.0]), params=p)
    b = m.predict(x, np.array([4.2]), params=p)
    assert np.array_equal(a, b)


def test_augno_query_sensitive():
    m = augno(3)
    x = rng(1).random((1, 16, 16))
    assert not np.allclose(m.predict(x, np.array([-3.0])), m.predict(x, np.array([2.0])))


def test_augno_slice_interpolates():
    m = augno(4)
    rho = GridField2D(G16, rng(2).random((16, 16)))
    y0, y1 = G16.y_nodes[5], G16.y_nodes[6]
    full = m.apply_query(rho, 0.5 * (y0 + y1), as_slice=False).values
    s = m.apply_query(rho, 0.5 * (y0 + y1)).values
    assert np.allclose(s, 0.5 * (full[:, 5] + full[:, 6]), rtol=1e-14)
    with pytest.raises(InvalidArgument):
        m.predict(rho.values[None])


# -- FullNO --------------------------------------------------------------------

def test_fullno_identity_pipeline():
    f = GridField2D(G16, rng(0).normal(size=(16, 16)))
    full = IndexBox.full(G16)
    spec = FullNOSpec(identity_model(G16), G16, full, full, M=float(np.max(np.abs(f.values))) + 1)
    assert np.array_equal(fullno_forward(spec, f).values, f.values)


def test_fullno_support_bookkeeping():
    box = IndexBox(4, 12, 2, 10)
    sub = G16.subgrid(*box.slices)
    v = np.zeros((16, 16))
    v[0, :] = 5.0
    v[:, 14] = -2.0  # both outside the box
    spec = FullNOSpec(identity_model(sub), G16, box, box, M=1.0)
    out = fullno_forward(spec, GridField2D(G16, v)).values
    assert np.all(out == 0)
    spec2 = FullNOSpec(NOModel.from_config(ModelConfig(width=3, depth=1, modes=2), sub, seed=1),
                       G16, box, IndexBox(0, 8, 8, 16), M=1.0)
    out = fullno_forward(spec2, GridField2D(G16, rng(1).random((16, 16)))).values
    assert np.all(out[8:] == 0) and np.all(out[:, :8] == 0)


def test_fullno_clamp_spike():
    M = 0.5
    v = rng(3).uniform(-0.4, 0.4, size=(16, 16))
    v[7, 7] = 10 * M
    f = GridField2D(G16, v)
    full = IndexBox.full(G16)
    spec = FullNOSpec(NOModel.from_config(ModelConfig(width=4, depth=2, modes=3, input_norm="none"), G16, seed=5),
                      G16, full, full, M)
    assert np.array_equal(fullno_forward(spec, f).values, fullno_forward(spec, truncate_tm(f, M)).values)


@given(seeds, st.floats(0.05, 5))
@settings(max_examples=15, deadline=None)
def test_fullno_clamp_invariant(seed, M):
    f = GridField2D(G16, np.random.default_rng(seed).normal(size=(16, 16)) * 3)
    box = IndexBox(2, 14, 0, 16)
    inner = NOModel.from_config(ModelConfig(width=3, depth=1, modes=2, input_norm="none"),
                                G16.subgrid(*box.slices), seed=0)
    spec = FullNOSpec(inner, G16, box, box, M)
    assert np.array_equal(fullno_forward(spec, f).values, fullno_forward(spec, truncate_tm(f, M)).values)


def test_fullno_validation():
    full = IndexBox.full(G16)
    with pytest.raises(InvalidArgument):
        FullNOSpec(identity_model(G16), G16, full, full, 0.0)
    with pytest.raises(InvalidArgument):
        FullNOSpec(identity_model(G16), G16, full, IndexBox(0, 8, 0, 16), 1.0)
    with pytest.raises(GridMismatch):
        FullNOSpec(identity_model(make_grid(-6, 6, 8, -6, 6, 8)), G16, full, full, 1.0)


# -- loss and gradients ------------------------------------------------------

def test_loss_examples():
    t = GridField2D(G16, rng(0).random((16, 16)))
    assert relative_l1_loss(t, t) == 0
    assert relative_l1_loss(GridField2D(G16, np.zeros((16, 16))), t) == pytest.approx(1, rel=1e-15)
    assert relative_l1_loss(GridField2D(G16, 2 * t.values), t) == pytest.approx(1, rel=1e-15)
    with pytest.raises(InvalidArgument):
        relative_l1_loss(t, GridField2D(G16, np.zeros((16, 16))))


def test_batch_loss_is_record_mean():
    w = np.outer(G16.wx, G16.wy)
    t = rng(1).random((3, 16, 16))
    p = t * np.array([1.0, 0.5, 3.0])[:, None, None]
    assert np.allclose(relative_l1_per_record(p, t, w), [0, 0.5, 2], rtol=1e-14)


def directional_errors(model, batch, n_dirs, r, eps=1e-5):
    flat = model.flat()
    gflat = model.flat(grad(model, batch))
    errs = []
    for _ in range(n_dirs):
        d = r.standard_normal(flat.size)
        lp = batch_loss(model, batch, model.unflat(flat + eps * d))
        lm = batch_loss(model, batch, model.unflat(flat - eps * d))
        fd, an = (lp - lm) / (2 * eps), gflat @ d
        errs.append(abs(fd - an) / max(abs(fd), abs(an)))
    return max(errs)


@pytest.mark.parametrize("cfg", [
    ModelConfig(width=8, depth=2, modes=4, proj_hidden=(8,)),
    ModelConfig(width=8, depth=2, modes=3, basis="learned", proj_hidden=(8,)),
    ModelConfig(width=6, depth=2, modes=4, query_channels=3, activation="gelu_tanh"),
    ModelConfig(width=6, depth=2, modes=4, lift_hidden=(5,), last_activation="gelu"),
])
def test_gradient_matches_central_differences(cfg):
    r = rng(7)
    m = NOModel.from_config(cfg, G16, seed=1)
    x = r.random((3, 16, 16))
    if cfg.query_channels:
        batch = Batch(x, r.random((3, 16)), r.uniform(-6, 6, 3))
    else:
        batch = Batch(x, r.random((3, 16, 16)))
    assert directional_errors(m, batch, 4, r) <= 1e-5


def test_gradient_zero_at_exact_fit():
    m = identity_model(G16)
    x = rng(0).random((2, 16, 16))
    g = grad(m, Batch(x, x.copy()))
    assert all(np.all(v == 0) for v in g.values())


def test_gradient_scales_linearly():
    m = NOModel.from_config(ModelConfig(width=4, depth=1, modes=2), G16, seed=2)
    b = Batch(rng(0).random((2, 16, 16)), rng(1).random((2, 16, 16)))
    _, g1 = loss_and_grad(m, b, scale=0.5)
    _, g3 = loss_and_grad(m, b, scale=1.5)
    for k in g1:
        assert np.allclose(g3[k], 3 * g1[k], rtol=1e-12, atol=1e-12 * np.max(np.abs(g3[k])))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_reports_layer():
    m = NOModel.from_config(ModelConfig(width=4, depth=2, modes=2, input_norm="none"), G16, seed=0)
    p = dict(m.params)
    p["hidden1.b"] = np.full_like(p["hidden1.b"], 1e300)
    p["hidden2.W"] = np.full_like(p["hidden2.W"], 1e300)
    with pytest.raises(NonFiniteError) as info:
        m.forward(rng(0).random((1, 16, 16)), params=p)
    assert info.value.layer_index == 2


def test_non_finite_parameters_rejected():
    m = NOModel.from_config(ModelConfig(width=4, depth=1, modes=2), G16)
    p = dict(m.params)
    p["lift.b0"] = np.full_like(p["lift.b0"], np.nan)
    with pytest.raises(InvalidArgument):
        m.with_params(p)


# -- optimizer and scheduler ---------------------------------------------------

def test_adam_steady_state_step():
    st_ = AdamState(lr=0.01)
    p = {"w": np.zeros(3)}
    g = {"w": np.array([2.0, -0.5, 1e-3])}
    for _ in range(500):
        prev = p["w"]
        p = adam_step(st_, p, g)
    step = p["w"] - prev
    assert np.allclose(step, -0.01 * np.sign(g["w"]), rtol=1e-4)


def test_adam_first_step_is_lr_sign():
    p = adam_step(AdamState(lr=0.1), {"w": np.array([1.0, 1.0])}, {"w": np.array([3.0, -1e-2])})
    assert np.allclose(p["w"], [0.9, 1.1], rtol=1e-6)


def test_adam_shape_check():
    with pytest.raises(InvalidArgument):
        adam_step(AdamState(lr=0.1), {"w": np.zeros(2)}, {"w": np.zeros(3)})


def test_scheduler_never_reduces_when_improving():
    s = PlateauScheduler(1e-3)
    for v in np.linspace(1, 0.1, 30):
        assert s.step(v) == 1e-3


def test_scheduler_six_flat_epochs_one_halving():
    s = PlateauScheduler(1e-3, patience=5, factor=0.5)
    s.step(1.0)
    lrs = [s.step(1.0) for _ in range(6)]
    assert lrs[:5] == [1e-3] * 5 and lrs[5] == 5e-4
    assert [s.step(1.0) for _ in range(5)] == [5e-4] * 5


def test_scheduler_floor():
    s = PlateauScheduler(1e-3, patience=0, factor=0.5, min_lr=3e-4)
    s.step(1.0)
    assert [s.step(1.0) for _ in range(3)] == [5e-4, 3e-4, 3e-4]


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(lr=0)
    with pytest.raises(InvalidArgument):
        TrainConfig(factor=1.0)
    with pytest.raises(InvalidArgument):
        TrainConfig(loss="mse")
    with pytest.raises(InvalidArgument):
        PlateauScheduler(1e-3, factor=0.0)


# -- training loop ---------------------------------------------------------------

def toy_data(n, seed):
    from condlab.mixture import ParamRanges, render_pair, sample_params
    g = make_grid(-6, 6, 16, -6, 6, 16)
    r = np.random.Generator(np.random.Philox(seed))
    pairs = [render_pair(sample_params(1, ParamRanges(), r), g) for _ in range(n)]
    return ArrayDataset(np.array([j.values for j, _ in pairs]), np.array([k.values for _, k in pairs]))


def test_training_reduces_loss_and_is_deterministic():
    data = toy_data(24, 0)
    cfg = TrainConfig(lr=3e-3, batch_size=8, max_epochs=3, chunk_size=3)
    m = NOModel.from_config(ModelConfig(width=6, depth=2, modes=3, proj_hidden=(8,)), G16, seed=0)
    m1, h1 = train(cfg, m, data)
    m2, h2 = train(cfg, m, data)
    assert h1.train_loss[-1] < h1.train_loss[0]
    assert np.array_equal(m1.flat(), m2.flat())
    assert h1.to_csv() == h2.to_csv()
    assert h1.to_csv().splitlines()[0] == "epoch,train_loss,val_loss,lr"


def test_threads_match_serial():
    data = toy_data(12, 1)
    m = NOModel.from_config(ModelConfig(width=4, depth=1, modes=2), G16, seed=0)
    a, _ = train(TrainConfig(batch_size=6, max_epochs=1, chunk_size=2), m, data)
    b, _ = train(TrainConfig(batch_size=6, max_epochs=1, chunk_size=2, threads=3), m, data)
    assert np.array_equal(a.flat(), b.flat())


def test_best_checkpoint_selected():
    data = toy_data(16, 2)
    m = NOModel.from_config(ModelConfig(width=4, depth=1, modes=2), G16, seed=0)
    best, hist = train(TrainConfig(lr=0.05, batch_size=4, max_epochs=4), m, data, data.subset(range(4)))
    assert evaluate(best, data.subset(range(4))).mean == pytest.approx(min(hist.val_loss), rel=1e-12)


def test_early_stop():
    data = toy_data(8, 3)
    m = NOModel.from_config(ModelConfig(width=4, depth=1, modes=2), G16, seed=0)
    _, hist = train(TrainConfig(lr=10.0, batch_size=8, max_epochs=30, early_stop=2), m, data)
    assert len(hist.epoch) < 30


def test_evaluate_identity_on_kernels():
    data = toy_data(5, 4)
    same = ArrayDataset(data.targets, data.targets)
    stats = evaluate(identity_model(G16), same)
    assert stats.median == 0 and stats.max == 0
