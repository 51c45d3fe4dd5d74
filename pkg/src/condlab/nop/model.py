"""Neural operators on a fixed grid: NO, augmented NO and the whole-space FullNO.

A model is a tuple of layer specs plus a flat dictionary of named parameter
arrays.  Forward passes take batches of channel-last fields (B, nx, ny, C).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..condition import IndexBox
from ..errors import GridMismatch, InvalidArgument, NonFiniteError
from ..grid import Grid2D, GridField1D, GridField2D
from .layers import ACTIVATIONS, HiddenLayer, PointwiseMLP

KINDS = ("lifting", "hidden", "projection", "vec2fun")
N_COORDS = 2


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int
    rank: int = 0
    nonlinearity: str = "gelu"
    basis: str = "fourier"
    hidden: tuple[int, ...] = ()  # inner widths of pointwise nets

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown layer kind {self.kind!r}")
        if self.width < 1 or self.rank < 0 or any(h < 1 for h in self.hidden):
            raise InvalidArgument(f"bad widths/rank in {self}")
        if self.nonlinearity not in ACTIVATIONS:
            raise InvalidArgument(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.basis not in ("fourier", "learned"):
            raise InvalidArgument(f"unknown basis {self.basis!r}")


@dataclass(frozen=True)
class ModelConfig:
    """Shape of a spectral NO; ``build_specs`` turns it into layer specs."""

    in_channels: int = 1
    out_channels: int = 1
    width: int = 16
    depth: int = 4
    modes: int = 8
    basis: str = "fourier"
    activation: str = "gelu"
    last_activation: str = "identity"
    lift_hidden: tuple[int, ...] = ()
    proj_hidden: tuple[int, ...] = (64,)
    query_channels: int = 0  # > 0 makes an augmented NO
    query_hidden: tuple[int, ...] = (16,)
    input_norm: str = "column_max"

    def __post_init__(self):
        for name in ("lift_hidden", "proj_hidden", "query_hidden"):
            object.__setattr__(self, name, tuple(int(h) for h in getattr(self, name)))


def build_specs(cfg: ModelConfig) -> tuple[tuple[LayerSpec, ...], LayerSpec | None]:
    layers = [LayerSpec("lifting", cfg.width, nonlinearity=cfg.activation, hidden=cfg.lift_hidden)]
    for k in range(cfg.depth):
        act = cfg.last_activation if k == cfg.depth - 1 else cfg.activation
        layers.append(LayerSpec("hidden", cfg.width, cfg.modes, act, cfg.basis))
    layers.append(LayerSpec("projection", cfg.out_channels, nonlinearity=cfg.activation,
                            hidden=cfg.proj_hidden))
    query = None
    if cfg.query_channels:
        query = LayerSpec("vec2fun", cfg.query_channels, nonlinearity=cfg.activation,
                          hidden=cfg.query_hidden)
    return tuple(layers), query


INPUT_NORMS = ("none", "max", "column_max")


def coordinate_channels(grid: Grid2D) -> np.ndarray:
    """Node coordinates rescaled to the unit box, shape (nx, ny, 2)."""
    X, Y = grid.mesh()
    return np.stack([(X - grid.x_min) / grid.x_length, (Y - grid.y_min) / grid.y_length], axis=-1)


def normalize_inputs(f: np.ndarray, mode: str) -> np.ndarray:
    """Rescale inputs without changing their conditional kernel.

    ``"max"`` divides every record/channel by its grid maximum.
    ``"column_max"`` divides every y-column by its own maximum over x,
    which uses the larger invariance rho(x, y) -> c(y) rho(x, y) and keeps
    columns with a tiny marginal at order one.  All-zero columns stay zero.
    """
    if mode == "none":
        return f
    axes = (1, 2) if mode == "max" else (1,)
    peak = np.max(np.abs(f), axis=axes, keepdims=True)
    return f / np.where(peak > 0, peak, 1.0)


def _check_finite(a: np.ndarray, layer: int, where: str):
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"non-finite values in {where} of layer {layer}", layer_index=layer)


class NOModel:
    """Q o L_L o ... o L_1 o R, optionally fed with a vec2fun query lift.

    Layer index 0 is the lifting net, 1..L the hidden layers, L+1 the
    projection; the query lift, when present, reports index -1.
    """

    def __init__(self, layers, grid: Grid2D, in_channels: int = 1, query: LayerSpec | None = None,
                 query_dim: int = 1, params: dict | None = None, seed: int = 0,
                 input_norm: str = "none"):
        layers = tuple(layers)
        if len(layers) < 2 or layers[0].kind != "lifting" or layers[-1].kind != "projection":
            raise InvalidArgument("layer stack must start with lifting and end with projection")
        if any(l.kind != "hidden" for l in layers[1:-1]):
            raise InvalidArgument("only hidden layers may sit between lifting and projection")
        if query is not None and query.kind != "vec2fun":
            raise InvalidArgument("query lift must be a vec2fun spec")
        if in_channels < 1:
            raise InvalidArgument("need at least one input channel")
        if input_norm not in INPUT_NORMS:
            raise InvalidArgument(f"unknown input normalization {input_norm!r}")
        self.input_norm = input_norm
        self.layers, self.grid, self.in_channels = layers, grid, int(in_channels)
        self.query, self.query_dim = query, int(query_dim)
        self.coords = coordinate_channels(grid)
        w2 = np.outer(grid.wx, grid.wy)
        q_ch = query.width if query is not None else 0
        self._mods = []
        d = self.in_channels + q_ch + N_COORDS
        lift = layers[0]
        self._mods.append(PointwiseMLP("lift", (d, *lift.hidden, lift.width), lift.nonlinearity))
        d = lift.width
        for k, spec in enumerate(layers[1:-1], start=1):
            self._mods.append(HiddenLayer(f"hidden{k}", d, spec.width, spec.rank, spec.nonlinearity,
                                          spec.basis, grid.shape, w2))
            d = spec.width
        proj = layers[-1]
        self._mods.append(PointwiseMLP("proj", (d + N_COORDS, *proj.hidden, proj.width),
                                       proj.nonlinearity))
        self._h = self._psi = None
        if query is not None:
            self._h = PointwiseMLP("vec_h", (N_COORDS, *query.hidden, query.width), query.nonlinearity)
            self._psi = PointwiseMLP("vec_psi", (self.query_dim, *query.hidden, query.width),
                                     query.nonlinearity)
        shapes = self.param_shapes()
        if params is None:
            params = self.init_params(seed)
        missing = set(shapes) ^ set(params)
        if missing:
            raise InvalidArgument(f"parameter names do not match the specs: {sorted(missing)}")
        self.params = {}
        for name, shape in shapes.items():
            a = np.array(params[name], dtype=np.float64)
            if a.shape != shape:
                raise InvalidArgument(f"parameter {name} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise InvalidArgument(f"parameter {name} is not finite")
            self.params[name] = a

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_config(cls, cfg: ModelConfig, grid: Grid2D, seed: int = 0, params=None) -> "NOModel":
        layers, query = build_specs(cfg)
        return cls(layers, grid, cfg.in_channels, query, 1, params=params, seed=seed,
                   input_norm=cfg.input_norm)

    def _modules(self):
        mods = list(self._mods)
        if self._h is not None:
            mods += [self._h, self._psi]
        return mods

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for m in self._modules():
            out.update(m.param_shapes())
        return out

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        params = {}
        for m in self._modules():
            params.update(m.init(rng))
        return params

    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes().values())

    def flat(self, params=None) -> np.ndarray:
        params = self.params if params is None else params
        return np.concatenate([params[k].ravel() for k in self.param_shapes()])

    def unflat(self, vec) -> dict[str, np.ndarray]:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params():
            raise InvalidArgument(f"flat vector has {vec.size} entries, model needs {self.n_params()}")
        out, pos = {}, 0
        for name, shape in self.param_shapes().items():
            n = int(np.prod(shape))
            out[name] = vec[pos:pos + n].reshape(shape).copy()
            pos += n
        return out

    def with_params(self, params) -> "NOModel":
        return NOModel(self.layers, self.grid, self.in_channels, self.query, self.query_dim,
                       params=params, input_norm=self.input_norm)

    def describe(self) -> dict:
        return {
            "layers": [asdict(l) for l in self.layers],
            "query": asdict(self.query) if self.query is not None else None,
            "query_dim": self.query_dim,
            "in_channels": self.in_channels,
            "input_norm": self.input_norm,
            "grid": list(self.grid.key()),
        }

    @classmethod
    def from_description(cls, desc: dict, params=None) -> "NOModel":
        grid = Grid2D(*desc["grid"])
        layers = [LayerSpec(**l) for l in desc["layers"]]
        query = LayerSpec(**desc["query"]) if desc.get("query") else None
        return cls(layers, grid, desc["in_channels"], query, desc.get("query_dim", 1), params=params,
                   input_norm=desc.get("input_norm", "none"))

    def describe_json(self) -> str:
        return json.dumps(self.describe(), sort_keys=True)

    # -- forward / backward ------------------------------------------------

    def _check_input(self, f: np.ndarray, z):
        if f.ndim == 3:
            f = f[..., None]
        if f.shape[1:3] != self.grid.shape:
            raise GridMismatch(f"input grid {f.shape[1:3]} does not match model grid {self.grid.shape}")
        if f.shape[-1] != self.in_channels:
            raise InvalidArgument(f"expected {self.in_channels} input channels, got {f.shape[-1]}")
        if (z is None) != (self.query is None):
            raise InvalidArgument("queries must be given exactly when the model has a vec2fun lift")
        if z is not None:
            z = np.asarray(z, dtype=np.float64).reshape(f.shape[0], self.query_dim)
        return f, z

    def forward(self, inputs, queries=None, params=None):
        """inputs: (B, nx, ny[, C]); queries: (B,) or (B, query_dim). Returns (out, cache)."""
        params = self.params if params is None else params
        f, z = self._check_input(np.asarray(inputs, dtype=np.float64), queries)
        f = normalize_inputs(f, self.input_norm)
        B = f.shape[0]
        coords = np.broadcast_to(self.coords, (B, *self.coords.shape))
        cache = {}
        parts = [f]
        if z is not None:
            hx, cache["h"] = self._h.forward(params, self.coords)
            pz, cache["psi"] = self._psi.forward(params, z)
            vz = hx[None] * pz[:, None, None, :]
            _check_finite(vz, -1, "vec2fun")
            cache["hx"], cache["pz"] = hx, pz
            parts.append(vz)
        parts.append(coords)
        h = np.concatenate(parts, axis=-1)
        caches = []
        last = len(self._mods) - 1
        for k, mod in enumerate(self._mods):
            if k == last:
                h = np.concatenate([h, coords], axis=-1)
            h, c = mod.forward(params, h)
            _check_finite(h, k, "forward")
            caches.append(c)
        cache["layers"] = caches
        return h, cache

    def backward(self, cache, g_out, params=None) -> dict[str, np.ndarray]:
        params = self.params if params is None else params
        grads = {}
        g = g_out
        last = len(self._mods) - 1
        for k in reversed(range(len(self._mods))):
            g, gp = self._mods[k].backward(params, cache["layers"][k], g)
            _check_finite(g, k, "backward")
            grads.update(gp)
            if k == last:
                g = g[..., :-N_COORDS]
        if self.query is not None:
            c = self.in_channels
            gv = g[..., c:c + self.query.width]
            g_hx = np.einsum("bijc,bc->ijc", gv, cache["pz"])
            g_pz = np.einsum("bijc,ijc->bc", gv, cache["hx"])
            _, gh = self._h.backward(params, cache["h"], g_hx)
            _, gpsi = self._psi.backward(params, cache["psi"], g_pz)
            grads.update(gh)
            grads.update(gpsi)
        return grads

    def predict(self, inputs, queries=None, params=None) -> np.ndarray:
        """Channel 0 of the output, shape (B, nx, ny)."""
        out, _ = self.forward(inputs, queries, params)
        return out[..., 0]

    # -- typed single-record entry points --------------------------------

    def apply(self, rho: GridField2D) -> GridField2D:
        if rho.grid != self.grid:
            raise GridMismatch(f"model grid {self.grid.key()} vs field grid {rho.grid.key()}")
        return GridField2D(self.grid, self.predict(rho.values[None])[0])

    def apply_query(self, rho: GridField2D, y: float, as_slice: bool = True):
        if rho.grid != self.grid:
            raise GridMismatch(f"model grid {self.grid.key()} vs field grid {rho.grid.key()}")
        out = self.predict(rho.values[None], np.array([[float(y)]]))[0]
        if not as_slice:
            return GridField2D(self.grid, out)
        return GridField1D(self.grid.x_nodes, slice_at_query(self.grid, out, y))


def slice_at_query(grid: Grid2D, values: np.ndarray, y: float) -> np.ndarray:
    """Column of ``values`` at y, linear between nodes."""
    j = grid.y_index(y)
    if j is not None:
        return values[..., :, j]
    if not grid.y_min <= y <= grid.y_max:
        raise InvalidArgument(f"query {y} outside the grid")
    j = min(int((y - grid.y_min) // grid.hy), grid.ny - 2)
    t = (y - grid.y_nodes[j]) / grid.hy
    return (1.0 - t) * values[..., :, j] + t * values[..., :, j + 1]


def identity_model(grid: Grid2D, depth: int = 2, rank: int = 2) -> NOModel:
    """Width-1 NO that reproduces its single input channel exactly."""
    layers = [LayerSpec("lifting", 1, nonlinearity="identity")]
    layers += [LayerSpec("hidden", 1, rank, "identity") for _ in range(depth)]
    layers.append(LayerSpec("projection", 1, nonlinearity="identity"))
    model = NOModel(layers, grid)
    params = {k: np.zeros_like(v) for k, v in model.params.items()}
    params["lift.W0"][0, 0] = 1.0
    params["proj.W0"][0, 0] = 1.0
    for k in range(1, depth + 1):
        params[f"hidden{k}.W"][0, 0] = 1.0
    return model.with_params(params)


# -- loss -----------------------------------------------------------------

def relative_l1_per_record(pred, target, weights) -> np.ndarray:
    """sum w|p - t| / sum w|t| per record; ``weights`` broadcasts over trailing axes."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    axes = tuple(range(1, target.ndim))
    den = np.sum(weights * np.abs(target), axis=axes)
    if np.any(den <= 0):
        raise InvalidArgument("relative L1 undefined for a zero-mass target")
    return np.sum(weights * np.abs(pred - target), axis=axes) / den


def relative_l1_loss(pred: GridField2D, target: GridField2D) -> float:
    if pred.grid != target.grid:
        raise GridMismatch(f"grid mismatch: {pred.grid.key()} vs {target.grid.key()}")
    w = np.outer(pred.grid.wx, pred.grid.wy)
    return float(relative_l1_per_record(pred.values[None], target.values[None], w)[0])


def relative_l1_grad(pred, target, weights, scale: float) -> np.ndarray:
    """Gradient of scale * sum_r relerr_r w.r.t. pred; sign(0) = 0 at the kink."""
    axes = tuple(range(1, target.ndim))
    den = np.sum(weights * np.abs(target), axis=axes, keepdims=True)
    return scale * weights * np.sign(pred - target) / den


@dataclass
class Batch:
    inputs: np.ndarray  # (B, nx, ny[, C])
    targets: np.ndarray  # (B, nx, ny) kernels, or (B, nx) slices when queries are set
    queries: np.ndarray | None = None


def _loss_weights(model: NOModel, batch: Batch) -> np.ndarray:
    g = model.grid
    return g.wx if batch.queries is not None else np.outer(g.wx, g.wy)


def _batch_pred(model: NOModel, out: np.ndarray, batch: Batch) -> np.ndarray:
    pred = out[..., 0]
    if batch.queries is None:
        return pred
    return np.stack([slice_at_query(model.grid, pred[b], float(batch.queries[b]))
                     for b in range(pred.shape[0])])


def _pred_adjoint(model: NOModel, g_pred: np.ndarray, batch: Batch, out_shape) -> np.ndarray:
    g_out = np.zeros(out_shape)
    if batch.queries is None:
        g_out[..., 0] = g_pred
        return g_out
    grid = model.grid
    for b in range(g_pred.shape[0]):
        y = float(batch.queries[b])
        j = grid.y_index(y)
        if j is not None:
            g_out[b, :, j, 0] = g_pred[b]
            continue
        j = min(int((y - grid.y_min) // grid.hy), grid.ny - 2)
        t = (y - grid.y_nodes[j]) / grid.hy
        g_out[b, :, j, 0] += (1.0 - t) * g_pred[b]
        g_out[b, :, j + 1, 0] += t * g_pred[b]
    return g_out


def batch_loss(model: NOModel, batch: Batch, params=None) -> float:
    out, _ = model.forward(batch.inputs, batch.queries, params)
    pred = _batch_pred(model, out, batch)
    return float(np.mean(relative_l1_per_record(pred, batch.targets, _loss_weights(model, batch))))


def loss_and_grad(model: NOModel, batch: Batch, params=None, scale: float | None = None):
    """Sum over the batch of scale * relerr (scale defaults to 1/B, i.e. the mean)."""
    out, cache = model.forward(batch.inputs, batch.queries, params)
    pred = _batch_pred(model, out, batch)
    w = _loss_weights(model, batch)
    scale = 1.0 / pred.shape[0] if scale is None else scale
    per = relative_l1_per_record(pred, batch.targets, w)
    g_pred = relative_l1_grad(pred, batch.targets, w, scale)
    grads = model.backward(cache, _pred_adjoint(model, g_pred, batch, out.shape), params)
    return float(scale * per.sum()), grads


def grad(model: NOModel, batch: Batch, params=None) -> dict[str, np.ndarray]:
    return loss_and_grad(model, batch, params)[1]


# -- whole-space composition -------------------------------------------------

@dataclass(frozen=True, eq=False)
class FullNOSpec:
    """Z_{out_box} o NO o S_M o R_{in_box} on a target grid."""

    inner: NOModel
    grid: Grid2D
    in_box: IndexBox
    out_box: IndexBox
    M: float
    _sub: Grid2D = field(init=False, repr=False)

    def __post_init__(self):
        if not self.M > 0:
            raise InvalidArgument(f"clamp level must be positive, got {self.M}")
        self.in_box.check(self.grid)
        self.out_box.check(self.grid)
        if self.in_box.shape != self.out_box.shape:
            raise InvalidArgument(f"box shapes differ: {self.in_box.shape} vs {self.out_box.shape}")
        sub = self.grid.subgrid(*self.in_box.slices)
        if self.inner.grid != sub:
            raise GridMismatch(f"inner model grid {self.inner.grid.key()} is not the restriction {sub.key()}")
        object.__setattr__(self, "_sub", sub)


def fullno_forward(spec: FullNOSpec, f: GridField2D) -> GridField2D:
    if f.grid != spec.grid:
        raise GridMismatch(f"field grid {f.grid.key()} vs FullNO grid {spec.grid.key()}")
    # S realized as the exact clip; (z+M)_+ - (z-M)_+ - M equals it in exact arithmetic
    clamped = np.clip(f.values[spec.in_box.slices], -spec.M, spec.M)
    inner = spec.inner.predict(clamped[None])[0]
    out = np.zeros(spec.grid.shape)
    out[spec.out_box.slices] = inner
    return GridField2D(spec.grid, out)
