"""Embedding front end: per-modality projection plus a one-layer transformer encoder."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .errors import ConfigError, DimensionError
from .params import ParamStore, prefixed, subset, uniform
from .tensor import Tensor


@dataclass
class Seq:
    modality: str
    features: Tensor  # (..., t, d_in)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if self.features.ndim < 2 or self.features.shape[-2] < 1:
            raise DimensionError(f"{self.modality}: sequence needs at least one time step")

    @property
    def length(self) -> int:
        return self.features.shape[-2]


@dataclass
class PreEmbed:
    V: Tensor
    S: Tensor
    T: Tensor

    def __getitem__(self, m: str) -> Tensor:
        return getattr(self, m)

    @property
    def lengths(self) -> tuple[int, int, int]:
        return self.V.shape[-2], self.S.shape[-2], self.T.shape[-2]


def init_extractor(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    d, h = cfg.d, cfg.d * cfg.ffn_mult
    one, zero = np.ones(d), np.zeros(d)
    return {
        "ln1.gain": one.copy(), "ln1.bias": zero.copy(),
        "attn.W_Q": uniform(rng, (d, d), d), "attn.W_K": uniform(rng, (d, d), d),
        "attn.W_V": uniform(rng, (d, d), d), "attn.W_O": uniform(rng, (d, d), d),
        "attn.b_O": zero.copy(),
        "ln2.gain": one.copy(), "ln2.bias": zero.copy(),
        "ffn.W1": uniform(rng, (d, h), d), "ffn.b1": np.zeros(h),
        "ffn.W2": uniform(rng, (h, d), h), "ffn.b2": zero.copy(),
        "lnf.gain": one.copy(), "lnf.bias": zero.copy(),
    }


def init_encoder(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    params: ParamStore = {}
    for m, d_in in zip(MODALITIES, cfg.raw_dims):
        if d_in == cfg.d:
            W = np.eye(cfg.d)
        else:
            W = uniform(rng, (d_in, cfg.d), d_in)
        params.update(prefixed(f"encoder.{m}.proj", {"W": W, "b": np.zeros(cfg.d)}))
    if cfg.share_extractor:
        params.update(prefixed("encoder.shared", init_extractor(cfg, rng)))
    else:
        for m in MODALITIES:
            params.update(prefixed(f"encoder.{m}", init_extractor(cfg, rng)))
    return params


def project(seq: Seq | Tensor, W: Tensor, b: Tensor) -> Tensor:
    x = seq.features if isinstance(seq, Seq) else seq
    if x.shape[-1] != W.shape[0]:
        raise DimensionError(f"project: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    return T.affine(x, W, b)


def sinusoidal_positions(t: int, d: int) -> np.ndarray:
    pos = np.arange(t)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def self_attention(x: Tensor, p: dict[str, Tensor], n_heads: int, return_weights: bool = False):
    """Multi-head scaled dot-product self-attention over the time axis."""
    *lead, t, d = x.shape
    if d % n_heads:
        raise ConfigError(f"d={d} is not divisible by n_heads={n_heads}")
    dh = d // n_heads

    def heads(z):
        z = T.reshape(z, (*lead, t, n_heads, dh))
        return T.permute(z, (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))

    q, k, v = heads(x @ p["attn.W_Q"]), heads(x @ p["attn.W_K"]), heads(x @ p["attn.W_V"])
    weights = T.softmax_rows(T.scale(q @ T.transpose(k), 1.0 / np.sqrt(dh)))
    ctx = weights @ v
    ctx = T.permute(ctx, (*range(len(lead)), len(lead) + 1, len(lead), len(lead) + 2))
    out = T.affine(T.reshape(ctx, (*lead, t, d)), p["attn.W_O"], p["attn.b_O"])
    return (out, weights) if return_weights else out


def feature_extract(x: Tensor, p: dict[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Pre-norm transformer block followed by a final layer norm.

    With every attention and feed-forward weight at zero the residual
    branches vanish and the output is ``layer_norm_rows(x)`` under the
    final norm's gain and bias.
    """
    if cfg.positional_encoding:
        x = x + T.Tensor(sinusoidal_positions(x.shape[-2], x.shape[-1]), dtype=x.dtype)
    eps = cfg.ln_eps
    h = T.layer_norm_rows(x, p["ln1.gain"], p["ln1.bias"], eps)
    x = x + self_attention(h, p, cfg.n_heads)
    h = T.layer_norm_rows(x, p["ln2.gain"], p["ln2.bias"], eps)
    h = T.affine(T.relu(T.affine(h, p["ffn.W1"], p["ffn.b1"])), p["ffn.W2"], p["ffn.b2"])
    x = x + h
    return T.layer_norm_rows(x, p["lnf.gain"], p["lnf.bias"], eps)


def encode(seqs: dict[str, Tensor], params: ParamStore, cfg: ModelConfig) -> PreEmbed:
    """Raw per-modality features -> preliminary representations H_V, H_S, H_T."""
    out = {}
    for m, d_in in zip(MODALITIES, cfg.raw_dims):
        x = seqs[m]
        if x.shape[-1] != d_in:
            raise DimensionError(f"{m}: expected raw width {d_in}, got {x.shape[-1]}")
        proj = subset(params, f"encoder.{m}.proj")
        h = project(x, proj["W"], proj["b"])
        block = subset(params, "encoder.shared" if cfg.share_extractor else f"encoder.{m}")
        out[m] = feature_extract(h, block, cfg)
    return PreEmbed(**out)
