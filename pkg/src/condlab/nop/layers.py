"""Layer primitives with explicit forward/backward passes.

Arrays are channel-last: a batch of grid functions has shape
(B, nx, ny, C).  Every layer exposes

    forward(params, x)        -> (y, cache)
    backward(params, cache, gy) -> (gx, {param_name: grad})

Complex spectral weights are stored as real arrays with a trailing
(re, im) axis; their gradients use the convention dL/dRe + i dL/dIm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from ..errors import InvalidArgument

SQRT2 = math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
GELU_TANH_C = math.sqrt(2.0 / math.pi)


# -- activations ------------------------------------------------------------

def act_forward(name: str, z: np.ndarray, want_aux: bool = False):
    """Apply the nonlinearity; with ``want_aux`` also return what backward reuses."""
    aux = None
    if name == "identity":
        y = z
    elif name == "relu":
        y = np.maximum(z, 0.0)
    elif name == "gelu":
        aux = 0.5 * (1.0 + erf(z / SQRT2))
        y = z * aux
    elif name == "gelu_tanh":
        aux = np.tanh(GELU_TANH_C * (z + 0.044715 * z ** 3))
        y = 0.5 * z * (1.0 + aux)
    else:
        raise InvalidArgument(f"unknown nonlinearity {name!r}")
    return (y, aux) if want_aux else y


def act_backward(name: str, z: np.ndarray, gy: np.ndarray, aux=None) -> np.ndarray:
    if name == "identity":
        return gy
    if name == "relu":
        # subgradient 0 at the kink
        return gy * (z > 0)
    if name == "gelu":
        cdf = 0.5 * (1.0 + erf(z / SQRT2)) if aux is None else aux
        return gy * (cdf + z * INV_SQRT_2PI * np.exp(-0.5 * z * z))
    if name == "gelu_tanh":
        t = np.tanh(GELU_TANH_C * (z + 0.044715 * z ** 3)) if aux is None else aux
        du = GELU_TANH_C * (1.0 + 3 * 0.044715 * z * z)
        return gy * (0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * du)
    raise InvalidArgument(f"unknown nonlinearity {name!r}")


ACTIVATIONS = ("identity", "relu", "gelu", "gelu_tanh")


# -- pointwise dense nets ---------------------------------------------------

@dataclass(frozen=True)
class PointwiseMLP:
    """Dense net applied independently at every node (acts on the last axis).

    Hidden layers use ``activation``; the output layer is affine.
    """

    prefix: str
    dims: tuple[int, ...]  # (d_in, hidden..., d_out)
    activation: str = "gelu"

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        out = {}
        for k, (a, b) in enumerate(zip(self.dims, self.dims[1:])):
            out[f"{self.prefix}.W{k}"] = (a, b)
            out[f"{self.prefix}.b{k}"] = (b,)
        return out

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        params = {}
        for k, (a, b) in enumerate(zip(self.dims, self.dims[1:])):
            bound = 1.0 / math.sqrt(a)
            params[f"{self.prefix}.W{k}"] = rng.uniform(-bound, bound, size=(a, b))
            params[f"{self.prefix}.b{k}"] = rng.uniform(-bound, bound, size=(b,))
        return params

    def forward(self, params, x):
        n = len(self.dims) - 1
        cache = []
        h = x
        for k in range(n):
            z = h @ params[f"{self.prefix}.W{k}"] + params[f"{self.prefix}.b{k}"]
            if k < n - 1:
                nxt, aux = act_forward(self.activation, z, True)
            else:
                nxt, aux = z, None
            cache.append((h, z, aux))
            h = nxt
        return h, cache

    def backward(self, params, cache, gy):
        n = len(self.dims) - 1
        grads = {}
        g = gy
        for k in reversed(range(n)):
            h, z, aux = cache[k]
            if k < n - 1:
                g = act_backward(self.activation, z, g, aux)
            W = params[f"{self.prefix}.W{k}"]
            grads[f"{self.prefix}.W{k}"] = h.reshape(-1, h.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            grads[f"{self.prefix}.b{k}"] = g.reshape(-1, g.shape[-1]).sum(axis=0)
            g = g @ W.T
        return g, grads


# -- nonlocal (rank-M) terms ------------------------------------------------

class FourierBasis:
    """Separable Fourier encoding/decoding on an nx x ny grid.

    Retained modes: kx in {0..M-1} U {-M..-1}, ky in {0..M-1}.  The encoding
    pairing is the rectangle-rule inner product against e^{-i k.x}/|Omega|
    (exactly orthonormal on the periodic grid); decoding synthesizes
    Re(sum_k a_k c_k e^{i k.x}) with a_k = 2 for ky > 0 so that identity
    multipliers give the orthogonal projection onto the retained modes.
    """

    def __init__(self, nx: int, ny: int, modes: int):
        if modes < 1 or 2 * modes > nx or modes > ny // 2 + 1:
            raise InvalidArgument(f"{modes} modes do not fit a {nx}x{ny} grid")
        self.nx, self.ny, self.modes = nx, ny, modes
        self.kx = np.concatenate([np.arange(modes), np.arange(-modes, 0)])
        self.ky = np.arange(modes)
        ix, iy = np.arange(nx), np.arange(ny)
        # analysis matrices: (nx, Kx) and (ny, My)
        self.ax = np.exp(-2j * np.pi * np.outer(ix, self.kx) / nx) / nx
        self.ay = np.exp(-2j * np.pi * np.outer(iy, self.ky) / ny) / ny
        amp = np.where(self.ky == 0, 1.0, 2.0)
        # ky = ny/2 (Nyquist, even ny) is its own conjugate
        if ny % 2 == 0:
            amp = np.where(self.ky == ny // 2, 1.0, amp)
        # synthesis matrices: (Kx, nx) and (My, ny)
        self.sx = np.exp(2j * np.pi * np.outer(self.kx, ix) / nx)
        self.sy = amp[:, None] * np.exp(2j * np.pi * np.outer(self.ky, iy) / ny)

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self.modes, self.modes)

    def encode(self, f: np.ndarray) -> np.ndarray:
        """(B, nx, ny, C) real -> (B, Kx, My, C) complex."""
        t = np.einsum("bijc,jl->bilc", f, self.ay, optimize=True)
        return np.einsum("bilc,ik->bklc", t, self.ax, optimize=True)

    def encode_adjoint(self, g: np.ndarray) -> np.ndarray:
        t = np.einsum("bklc,ik->bilc", g, self.ax.conj(), optimize=True)
        return np.einsum("bilc,jl->bijc", t, self.ay.conj(), optimize=True).real

    def decode(self, d: np.ndarray) -> np.ndarray:
        """(B, Kx, My, O) complex -> (B, nx, ny, O) real."""
        t = np.einsum("bklo,ki->bilo", d, self.sx, optimize=True)
        return np.einsum("bilo,lj->bijo", t, self.sy, optimize=True).real

    def decode_adjoint(self, g: np.ndarray) -> np.ndarray:
        t = np.einsum("bijo,lj->bilo", g, self.sy.conj(), optimize=True)
        return np.einsum("bilo,ki->bklo", t, self.sx.conj(), optimize=True)


@dataclass(frozen=True)
class HiddenLayer:
    """sigma(W f + b + sum_m phi_m T_m <f, psi_m>) on a fixed grid.

    basis="fourier": psi/phi are fixed Fourier modes (``rank`` modes per
    axis), T_m complex channel mixers.  basis="learned": ``rank`` trainable
    scalar grid functions psi_m, phi_m, real mixers T_m, and the pairing
    is trapezoid quadrature.
    """

    prefix: str
    d_in: int
    d_out: int
    rank: int
    activation: str
    basis: str
    grid_shape: tuple[int, int]
    quad_weights: np.ndarray | None = None  # (nx, ny) for the learned basis

    def fourier(self) -> FourierBasis:
        return _fourier_cache(*self.grid_shape, self.rank)

    def param_shapes(self):
        p = self.prefix
        shapes = {f"{p}.W": (self.d_in, self.d_out), f"{p}.b": (self.d_out,)}
        if self.rank == 0:
            return shapes
        nx, ny = self.grid_shape
        if self.basis == "fourier":
            shapes[f"{p}.T"] = (2 * self.rank, self.rank, self.d_in, self.d_out, 2)
        elif self.basis == "learned":
            shapes[f"{p}.T"] = (self.rank, self.d_in, self.d_out)
            shapes[f"{p}.psi"] = (self.rank, nx, ny)
            shapes[f"{p}.phi"] = (self.rank, nx, ny)
        else:
            raise InvalidArgument(f"unknown basis {self.basis!r}")
        return shapes

    def init(self, rng: np.random.Generator):
        p = self.prefix
        bound = 1.0 / math.sqrt(self.d_in)
        params = {f"{p}.W": rng.uniform(-bound, bound, size=(self.d_in, self.d_out)),
                  f"{p}.b": rng.uniform(-bound, bound, size=(self.d_out,))}
        if self.rank == 0:
            return params
        scale = 1.0 / (self.d_in * self.d_out)
        shapes = self.param_shapes()
        params[f"{p}.T"] = scale * rng.uniform(0.0, 1.0, size=shapes[f"{p}.T"])
        if self.basis == "learned":
            nx, ny = self.grid_shape
            params[f"{p}.psi"] = rng.normal(0.0, 1.0, size=(self.rank, nx, ny))
            params[f"{p}.phi"] = rng.normal(0.0, 1.0, size=(self.rank, nx, ny))
        return params

    def nonlocal_forward(self, params, f):
        p = self.prefix
        if self.rank == 0:
            return np.zeros(f.shape[:-1] + (self.d_out,)), None
        if self.basis == "fourier":
            T = params[f"{p}.T"]
            Tc = T[..., 0] + 1j * T[..., 1]
            c = self.fourier().encode(f)
            d = np.einsum("bklc,klco->bklo", c, Tc, optimize=True)
            return self.fourier().decode(d), (c, Tc)
        w = self.quad_weights
        psi, phi, T = params[f"{p}.psi"], params[f"{p}.phi"], params[f"{p}.T"]
        a = np.einsum("mij,bijc->bmc", psi * w, f, optimize=True)
        d = np.einsum("bmc,mco->bmo", a, T, optimize=True)
        return np.einsum("mij,bmo->bijo", phi, d, optimize=True), (a, d)

    def nonlocal_backward(self, params, f, aux, g):
        p = self.prefix
        if self.rank == 0:
            return np.zeros_like(f), {}
        if self.basis == "fourier":
            c, Tc = aux
            gd = self.fourier().decode_adjoint(g)
            gT = np.einsum("bklc,bklo->klco", c.conj(), gd, optimize=True)
            gc = np.einsum("bklo,klco->bklc", gd, Tc.conj(), optimize=True)
            gf = self.fourier().encode_adjoint(gc)
            return gf, {f"{p}.T": np.stack([gT.real, gT.imag], axis=-1)}
        w = self.quad_weights
        psi, phi, T = params[f"{p}.psi"], params[f"{p}.phi"], params[f"{p}.T"]
        a, d = aux
        gd = np.einsum("mij,bijo->bmo", phi, g, optimize=True)
        gphi = np.einsum("bijo,bmo->mij", g, d, optimize=True)
        gT = np.einsum("bmc,bmo->mco", a, gd, optimize=True)
        ga = np.einsum("bmo,mco->bmc", gd, T, optimize=True)
        gpsi = np.einsum("bmc,bijc->mij", ga, f, optimize=True) * w
        gf = np.einsum("mij,bmc->bijc", psi * w, ga, optimize=True)
        return gf, {f"{p}.T": gT, f"{p}.psi": gpsi, f"{p}.phi": gphi}

    def forward(self, params, f):
        p = self.prefix
        nl, aux = self.nonlocal_forward(params, f)
        z = f @ params[f"{p}.W"] + params[f"{p}.b"] + nl
        y, act_aux = act_forward(self.activation, z, True)
        return y, (f, z, aux, act_aux)

    def backward(self, params, cache, gy):
        p = self.prefix
        f, z, aux, act_aux = cache
        gz = act_backward(self.activation, z, gy, act_aux)
        gflat = gz.reshape(-1, gz.shape[-1])
        grads = {f"{p}.W": f.reshape(-1, f.shape[-1]).T @ gflat, f"{p}.b": gflat.sum(axis=0)}
        gf_nl, g_nl = self.nonlocal_backward(params, f, aux, gz)
        grads.update(g_nl)
        return gz @ params[f"{p}.W"].T + gf_nl, grads


_FOURIER: dict[tuple[int, int, int], FourierBasis] = {}


def _fourier_cache(nx: int, ny: int, modes: int) -> FourierBasis:
    # read-mostly; a racing duplicate construction is harmless
    key = (nx, ny, modes)
    basis = _FOURIER.get(key)
    if basis is None:
        basis = _FOURIER[key] = FourierBasis(nx, ny, modes)
    return basis
