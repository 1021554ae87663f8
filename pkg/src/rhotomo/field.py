"""Neural attenuation field ``(x, y, z, rho0) -> rho`` with manual backprop.

Positions go through a multiresolution hash grid, the prior value ``rho0``
through a learnable linear map, and the concatenated features through a ReLU
MLP whose scalar output is made non-negative by softplus (or ReLU).
Setting ``prior_features=0`` drops the prior path and gives a position-only
field.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .errors import NumericalError, ValidationError

__all__ = [
    "FieldConfig",
    "FieldModel",
    "AdamState",
    "hash_encode",
    "hash_encode_backward",
    "prior_encode",
    "field_forward",
    "field_backward",
    "adam_step",
]

@dataclass
class FieldConfig:
    levels: int = 8
    table_size: int = 2**16
    features_per_level: int = 2
    base_resolution: int = 16
    per_level_scale: float = 1.38
    prior_features: int = 16
    hidden_layers: int = 4
    hidden_width: int = 64
    output_activation: str = "softplus"
    output_bias: float = -4.0
    hash_init_range: float = 1e-4
    prior_init_std: float = 0.1
    dtype: str = "float32"

    def __post_init__(self):
        if min(self.levels, self.table_size, self.features_per_level, self.base_resolution) < 1:
            raise ValidationError("hash grid sizes must be >= 1")
        if not self.per_level_scale > 1.0 and self.levels > 1:
            raise ValidationError("per_level_scale must be > 1")
        if self.prior_features < 0 or self.hidden_layers < 0 or self.hidden_width < 1:
            raise ValidationError("invalid MLP or prior-encoder width")
        if self.output_activation not in ("softplus", "relu"):
            raise ValidationError(f"unknown output activation {self.output_activation!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValidationError("dtype must be float32 or float64")
        res = self.resolutions()
        if np.any(np.diff(res) <= 0):
            raise ValidationError(f"hash resolutions must strictly increase, got {res.tolist()}")

    def resolutions(self) -> np.ndarray:
        return np.array(
            [math.floor(self.base_resolution * self.per_level_scale**l) for l in range(self.levels)],
            dtype=np.int64,
        )

    @property
    def input_width(self) -> int:
        return self.levels * self.features_per_level + self.prior_features


@dataclass
class FieldModel:
    """Configuration plus named parameter arrays (insertion order is the layout)."""

    config: FieldConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def init(cls, config: FieldConfig, rng: np.random.Generator) -> "FieldModel":
        dt = np.dtype(config.dtype)
        c = config
        p = {}
        p["hash.tables"] = rng.uniform(
            -c.hash_init_range, c.hash_init_range, size=(c.levels, c.table_size, c.features_per_level)
        ).astype(dt)
        if c.prior_features:
            p["prior.weight"] = (rng.standard_normal(c.prior_features) * c.prior_init_std).astype(dt)
            p["prior.bias"] = np.zeros(c.prior_features, dt)
        width_in = c.input_width
        for i in range(c.hidden_layers):
            bound = math.sqrt(6.0 / width_in)
            p[f"mlp.{i}.weight"] = rng.uniform(-bound, bound, size=(width_in, c.hidden_width)).astype(dt)
            p[f"mlp.{i}.bias"] = np.zeros(c.hidden_width, dt)
            width_in = c.hidden_width
        bound = math.sqrt(1.0 / width_in)
        p[f"mlp.{c.hidden_layers}.weight"] = rng.uniform(-bound, bound, size=(width_in, 1)).astype(dt)
        p[f"mlp.{c.hidden_layers}.bias"] = np.full(1, c.output_bias, dt)
        return cls(config, p)

    @property
    def resolutions(self) -> np.ndarray:
        return self.config.resolutions()

    @property
    def n_layers(self) -> int:
        return self.config.hidden_layers + 1

    def layout(self) -> list[tuple[str, tuple[int, ...], int]]:
        """``(name, shape, offset)`` for each parameter in a flat blob."""
        out, offset = [], 0
        for name, arr in self.params.items():
            out.append((name, tuple(arr.shape), offset))
            offset += arr.size
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.params.values()])

    def copy(self) -> "FieldModel":
        return FieldModel(FieldConfig(**asdict(self.config)), {k: v.copy() for k, v in self.params.items()})

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}


# ---------------------------------------------------------------- hash grid

@njit(cache=True)
def _hash_forward(points, tables, resolutions, table_size, idx, weights, feats):
    n = points.shape[0]
    levels, _, nf = tables.shape
    base = np.empty(3, np.int64)
    frac = np.empty(3)
    for p in range(n):
        for l in range(levels):
            res = resolutions[l]
            side = res + 1
            dense = side * side * side <= table_size
            for a in range(3):
                x = points[p, a]
                if x < 0.0:
                    x = 0.0
                elif x > 1.0:
                    x = 1.0
                pos = x * res
                i0 = math.floor(pos)
                if i0 > res - 1:
                    i0 = res - 1
                base[a] = i0
                frac[a] = pos - i0
            for c in range(8):
                w = 1.0
                cx = base[0] + (c & 1)
                cy = base[1] + ((c >> 1) & 1)
                cz = base[2] + ((c >> 2) & 1)
                w *= frac[0] if c & 1 else 1.0 - frac[0]
                w *= frac[1] if (c >> 1) & 1 else 1.0 - frac[1]
                w *= frac[2] if (c >> 2) & 1 else 1.0 - frac[2]
                if dense:
                    h = cx + cy * side + cz * side * side
                else:
                    h = ((cx * 1) ^ (cy * 2654435761) ^ (cz * 805459861)) & 0xFFFFFFFF
                    h = h % table_size
                idx[p, l, c] = h
                weights[p, l, c] = w
                for f in range(nf):
                    feats[p, l * nf + f] += w * tables[l, h, f]


@njit(cache=True)
def _hash_backward(grad_feats, idx, weights, grad_tables):
    n, levels, _ = idx.shape
    nf = grad_tables.shape[2]
    for p in range(n):
        for l in range(levels):
            for c in range(8):
                h = idx[p, l, c]
                w = weights[p, l, c]
                for f in range(nf):
                    grad_tables[l, h, f] += w * grad_feats[p, l * nf + f]


def hash_encode(points, tables, resolutions):
    """Multiresolution hash features for points in ``[0, 1]^3`` (clamped).

    Returns ``(features, cache)`` with features of shape ``(n, L*F)``. Levels
    whose full lattice fits in the table are indexed densely, the rest through
    the XOR-of-primes spatial hash.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    n = pts.shape[0]
    levels, table_size, nf = tables.shape
    idx = np.empty((n, levels, 8), np.int64)
    weights = np.empty((n, levels, 8), tables.dtype)
    feats = np.zeros((n, levels * nf), tables.dtype)
    _hash_forward(pts, tables, np.asarray(resolutions, np.int64), table_size, idx, weights, feats)
    return feats, (idx, weights)


def hash_encode_backward(grad_features, cache, table_shape, dtype=np.float64):
    idx, weights = cache
    grad = np.zeros(table_shape, dtype)
    _hash_backward(np.ascontiguousarray(grad_features, dtype=dtype), idx, weights.astype(dtype, copy=False), grad)
    return grad


def prior_encode(rho0, weight, bias):
    """Linear lift of scalar priors to ``k`` features: ``rho0 * weight + bias``."""
    rho0 = np.asarray(rho0)
    return rho0[..., None] * weight + bias


# ------------------------------------------------------------ forward / backward

def _softplus(z):
    return np.logaddexp(0.0, z).astype(z.dtype, copy=False)


def _sigmoid(z):
    return (0.5 * (1.0 + np.tanh(0.5 * z))).astype(z.dtype, copy=False)


def field_forward(points, rho0, model: FieldModel):
    """Evaluate the field at normalised points with prior values ``rho0``.

    Returns ``(rho, cache)``; ``rho`` has shape ``(n,)``.
    """
    p = model.params
    cfg = model.config
    dt = p["hash.tables"].dtype
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    feats, hash_cache = hash_encode(pts, p["hash.tables"], model.resolutions)
    rho0 = np.asarray(rho0, dtype=dt).reshape(-1)
    if rho0.shape[0] != pts.shape[0]:
        raise ValidationError("need one prior value per point")
    if cfg.prior_features:
        h = np.concatenate([feats, prior_encode(rho0, p["prior.weight"], p["prior.bias"])], axis=1)
    else:
        h = feats
    inputs, pre = [], []
    for i in range(model.n_layers):
        inputs.append(h)
        z = h @ p[f"mlp.{i}.weight"] + p[f"mlp.{i}.bias"]
        pre.append(z)
        h = np.maximum(z, 0) if i < model.n_layers - 1 else z
    z = h[:, 0]
    rho = _softplus(z) if cfg.output_activation == "softplus" else np.maximum(z, 0)
    if not np.all(np.isfinite(rho)):
        raise NumericalError("non-finite field output")
    cache = {"hash": hash_cache, "rho0": rho0, "inputs": inputs, "pre": pre, "n": pts.shape[0]}
    return rho, cache


def field_backward(grad_rho, cache, model: FieldModel) -> dict[str, np.ndarray]:
    """Gradients of ``sum(grad_rho * rho)`` w.r.t. every parameter."""
    p = model.params
    cfg = model.config
    dt = p["hash.tables"].dtype
    g_rho = np.asarray(grad_rho, dtype=dt).reshape(-1)
    if g_rho.shape[0] != cache["n"]:
        raise ValidationError("upstream gradient does not match cached forward pass")
    z = cache["pre"][-1][:, 0]
    if cfg.output_activation == "softplus":
        g = (g_rho * _sigmoid(z))[:, None]
    else:
        g = (g_rho * (z > 0))[:, None]
    grads = {}
    for i in reversed(range(model.n_layers)):
        if i < model.n_layers - 1:
            g = g * (cache["pre"][i] > 0)
        grads[f"mlp.{i}.weight"] = cache["inputs"][i].T @ g
        grads[f"mlp.{i}.bias"] = g.sum(axis=0)
        g = g @ p[f"mlp.{i}.weight"].T
    n_hash = cfg.levels * cfg.features_per_level
    if cfg.prior_features:
        g_prior = g[:, n_hash:]
        grads["prior.weight"] = cache["rho0"] @ g_prior
        grads["prior.bias"] = g_prior.sum(axis=0)
    grads["hash.tables"] = hash_encode_backward(g[:, :n_hash], cache["hash"], p["hash.tables"].shape, dt)
    return {k: grads[k] for k in p}


# ---------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(model: FieldModel, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One bias-corrected Adam update, applied to ``model.params`` in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, param in model.params.items():
        g = grads[name]
        if g.shape != param.shape:
            raise ValidationError(f"gradient shape mismatch for {name}")
        m = state.m.setdefault(name, np.zeros_like(param))
        v = state.v.setdefault(name, np.zeros_like(param))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        param -= ((lr / c1) * m / (np.sqrt(v / c2) + eps)).astype(param.dtype, copy=False)
    return state
