"""Noise-prediction network for one-hot records.

The network maps a noised batch (B, D, K) and per-sample step indices to a
predicted noise batch of the same shape: embed the K channels of each of the
D attribute positions, add a learned positional table and a projected
sinusoidal time embedding, run pre-norm residual blocks of multi-head
self-attention over the D positions (Q/K/V/output maps are kernel-size-1 1-D
convolutions along the position axis) plus a 4x feed-forward, then project
back to K channels.  The output projection starts at zero, so a fresh network
predicts zero noise and the initial training loss sits at E[eps^2] = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .schema import AttributeSchema

__all__ = [
    "NetworkConfig",
    "NetworkParams",
    "init_params",
    "time_embedding",
    "predict_noise",
]

_ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu}


@dataclass(frozen=True)
class NetworkConfig:
    embed_dim: int = 128
    num_heads: int = 4
    num_blocks: int = 2
    time_embed_dim: int = 128
    activation: str = "gelu"
    dropout: float = 0.0

    def __post_init__(self) -> None:
        for name in ("embed_dim", "num_heads", "num_blocks", "time_embed_dim"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"network config: {name} must be an integer >= 1")
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"network config: embed_dim {self.embed_dim} not divisible by "
                f"num_heads {self.num_heads}"
            )
        if self.time_embed_dim % 2 != 0:
            raise ValueError(
                "network config: time_embed_dim must be even (sin/cos halves)"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(
                f"network config: unknown activation {self.activation!r}"
            )
        if not isinstance(self.dropout, (int, float)) or not 0.0 <= self.dropout < 1.0:
            raise ValueError("network config: dropout must be in [0, 1)")

    @classmethod
    def from_dict(cls, obj: dict) -> "NetworkConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"network config: unknown field(s) {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class NetworkParams:
    """All learnable weights, keyed by dotted name in creation order."""

    config: NetworkConfig
    num_attributes: int
    num_categories: int
    tensors: dict[str, Tensor]

    @property
    def dtype(self):
        return self.tensors["embed.weight"].dtype

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def init_params(
    config: NetworkConfig,
    schema: AttributeSchema,
    seed: int,
    dtype=np.float32,
) -> NetworkParams:
    """Deterministically initialize weights for a schema.

    Matrix weights are normal with scale 1/sqrt(fan_in); the positional table
    and the output projection start at zero (so the initial predicted noise
    is exactly zero), norm gains at one.
    """
    dtype = np.dtype(dtype)
    rng = np.random.default_rng(seed)
    d, k = schema.num_attributes, schema.num_categories
    e, tdim = config.embed_dim, config.time_embed_dim
    hidden = 4 * e

    def normal(shape, fan_in):
        return Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(fan_in), shape).astype(dtype)
        )

    def zeros(shape):
        return Tensor(np.zeros(shape, dtype=dtype))

    def ones(shape):
        return Tensor(np.ones(shape, dtype=dtype))

    tensors: dict[str, Tensor] = {}
    tensors["embed.weight"] = normal((k, e), k)
    tensors["position.table"] = zeros((d, e))
    tensors["time.weight"] = normal((tdim, e), tdim)
    tensors["time.bias"] = zeros((e,))
    for i in range(config.num_blocks):
        p = f"blocks.{i}"
        tensors[f"{p}.norm1.gain"] = ones((e,))
        tensors[f"{p}.norm1.bias"] = zeros((e,))
        for proj in ("q", "k", "v", "out"):
            tensors[f"{p}.attn.{proj}.weight"] = normal((e, e, 1), e)
            tensors[f"{p}.attn.{proj}.bias"] = zeros((e,))
        tensors[f"{p}.norm2.gain"] = ones((e,))
        tensors[f"{p}.norm2.bias"] = zeros((e,))
        tensors[f"{p}.ff.expand.weight"] = normal((hidden, e, 1), e)
        tensors[f"{p}.ff.expand.bias"] = zeros((hidden,))
        tensors[f"{p}.ff.project.weight"] = normal((e, hidden, 1), hidden)
        tensors[f"{p}.ff.project.bias"] = zeros((e,))
    tensors["out.weight"] = zeros((e, k))
    tensors["out.bias"] = zeros((k,))
    for name, tensor in tensors.items():
        tensor.name = name
    return NetworkParams(
        config=config, num_attributes=d, num_categories=k, tensors=tensors
    )


def time_embedding(t, dim: int, dtype=np.float64) -> np.ndarray:
    """Sinusoidal step features: [sin(t/10000^(2i/dim)), cos(...)] halves.

    ``t`` may be a scalar or a 1-D array of non-negative step indices; the
    result has shape (dim,) or (len(t), dim).
    """
    if dim < 2 or dim % 2 != 0:
        raise ValueError(f"time embedding dim must be even and >= 2, got {dim}")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("time step must be >= 0")
    half = dim // 2
    freqs = 10000.0 ** (-2.0 * np.arange(half) / dim)
    angles = t_arr[..., None] * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1).astype(dtype)


def _position_linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Kernel-size-1 conv along the position axis: (B, D, C_in) -> (B, D, C_out)."""
    xt = ad.transpose(x, (0, 2, 1))
    y = ad.conv1d(xt, weight, padding="same")
    y = ad.add(y, ad.reshape(bias, (bias.data.shape[0], 1)))
    return ad.transpose(y, (0, 2, 1))


def _norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    return ad.add(ad.mul(ad.layer_norm(x, axis=-1), gain), bias)


def _attention(params, prefix, x, dropout_rng, attention_sink):
    cfg = params.config
    b, d, e = x.data.shape
    heads = cfg.num_heads
    head_dim = e // heads

    def split(z):
        z = ad.reshape(z, (b, d, heads, head_dim))
        return ad.transpose(z, (0, 2, 1, 3))  # (B, H, D, head_dim)

    q = split(_position_linear(x, params[f"{prefix}.q.weight"], params[f"{prefix}.q.bias"]))
    k = split(_position_linear(x, params[f"{prefix}.k.weight"], params[f"{prefix}.k.bias"]))
    v = split(_position_linear(x, params[f"{prefix}.v.weight"], params[f"{prefix}.v.bias"]))

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(head_dim))
    attn = ad.softmax(scores, axis=-1)
    if attention_sink is not None:
        attention_sink.append(np.array(attn.data, copy=True))
    if cfg.dropout > 0.0 and dropout_rng is not None:
        attn = ad.dropout(attn, cfg.dropout, dropout_rng)
    ctx = ad.matmul(attn, v)  # (B, H, D, head_dim)
    ctx = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, d, e))
    return _position_linear(
        ctx, params[f"{prefix}.out.weight"], params[f"{prefix}.out.bias"]
    )


def predict_noise(
    params: NetworkParams,
    x_t,
    t,
    *,
    dropout_rng: np.random.Generator | None = None,
    attention_sink: list | None = None,
) -> Tensor:
    """Predicted noise for a noised batch; shape mirrors the input (B, D, K).

    ``t`` is a scalar step or one step per batch element.  Dropout fires only
    when the config rate is positive *and* ``dropout_rng`` is passed
    (training); without a generator the forward pass is deterministic.
    ``attention_sink``, if given, collects each block's post-softmax
    attention weights as plain arrays.
    """
    cfg = params.config
    x = x_t if isinstance(x_t, Tensor) else ad.constant(x_t)
    if x.data.ndim != 3 or x.data.shape[1:] != (
        params.num_attributes,
        params.num_categories,
    ):
        raise ad.ShapeError(
            f"expected (B, {params.num_attributes}, {params.num_categories}), "
            f"got {x.data.shape}"
        )
    b = x.data.shape[0]
    t_arr = np.atleast_1d(np.asarray(t))
    if t_arr.shape == (1,) and b > 1:
        t_arr = np.broadcast_to(t_arr, (b,))
    if t_arr.shape != (b,):
        raise ad.ShapeError(f"need one step index per sample, got shape {t_arr.shape}")

    activation = _ACTIVATIONS[cfg.activation]
    time_feats = time_embedding(t_arr, cfg.time_embed_dim, dtype=x.data.dtype)
    t_emb = ad.add(ad.matmul(ad.constant(time_feats), params["time.weight"]),
                   params["time.bias"])

    h = ad.matmul(x, params["embed.weight"])  # (B, D, E)
    h = ad.add(h, params["position.table"])
    h = ad.add(h, ad.reshape(t_emb, (b, 1, cfg.embed_dim)))

    for i in range(cfg.num_blocks):
        p = f"blocks.{i}"
        normed = _norm(h, params[f"{p}.norm1.gain"], params[f"{p}.norm1.bias"])
        h = ad.add(h, _attention(params, f"{p}.attn", normed, dropout_rng, attention_sink))
        normed = _norm(h, params[f"{p}.norm2.gain"], params[f"{p}.norm2.bias"])
        ff = _position_linear(
            normed, params[f"{p}.ff.expand.weight"], params[f"{p}.ff.expand.bias"]
        )
        ff = activation(ff)
        if cfg.dropout > 0.0 and dropout_rng is not None:
            ff = ad.dropout(ff, cfg.dropout, dropout_rng)
        ff = _position_linear(
            ff, params[f"{p}.ff.project.weight"], params[f"{p}.ff.project.bias"]
        )
        h = ad.add(h, ff)

    out = ad.add(ad.matmul(h, params["out.weight"]), params["out.bias"])
    return out
