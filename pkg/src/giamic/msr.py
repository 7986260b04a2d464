"""Modality-specific representations via gated interactive attention (GIA)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .errors import DimensionError
from .params import ParamStore, prefixed, subset, uniform
from .tensor import Tensor

# the three GIA blocks, each run in both directions
PAIRS = (("V", "S"), ("S", "T"), ("T", "V"))
DIRECTIONS = tuple(d for a, b in PAIRS for d in ((a, b), (b, a)))


def direction_key(a: str, b: str) -> str:
    return f"gia.{a}->{b}"


@dataclass
class MsrOutput:
    V: Tensor
    S: Tensor
    T: Tensor
    concat: Tensor  # (k+m+n) x d, order V, S, T

    def __getitem__(self, m: str) -> Tensor:
        return getattr(self, m)


def init_gia(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    d = cfg.d
    params: ParamStore = {}
    for a, b in DIRECTIONS:
        params.update(prefixed(direction_key(a, b), {
            "W_Q": uniform(rng, (d, d), d),
            "W_K": uniform(rng, (d, d), d),
            "W_V": uniform(rng, (d, d), d),
            "W_g": uniform(rng, (d, d), d),
            "b_g": np.zeros(d),
        }))
    return params


def attend(query_src: Tensor, kv_src: Tensor, W_Q: Tensor, W_K: Tensor, W_V: Tensor,
           return_weights: bool = False):
    """Single-head scaled dot-product attention of ``query_src`` over ``kv_src``."""
    d = query_src.shape[-1]
    if kv_src.shape[-1] != d:
        raise DimensionError(f"attention: feature widths {d} and {kv_src.shape[-1]} differ")
    q = query_src @ W_Q
    k = kv_src @ W_K
    v = kv_src @ W_V
    w = T.softmax_rows(T.scale(q @ T.transpose(k), 1.0 / np.sqrt(d)))
    out = w @ v
    return (out, w) if return_weights else out


def cross_attend(H_A: Tensor, H_B: Tensor, p: dict[str, Tensor]) -> Tensor:
    """H_{A->B}: rows of A attend over B."""
    return attend(H_A, H_B, p["W_Q"], p["W_K"], p["W_V"])


def gate(H_ab: Tensor, p: dict[str, Tensor], eps: float = 1e-5) -> Tensor:
    """Gate vector sigma(W_g . Norm(AvgPool(H_ab)) + b_g), shape (..., 1, d).

    The single row broadcasts over every time step of A when applied.
    """
    pooled = T.layer_norm_rows(T.avg_pool_time(H_ab), eps=eps)
    return T.sigmoid(T.affine(pooled, p["W_g"], p["b_g"]))


def gated_mix(G: Tensor, H_ab: Tensor, H_A: Tensor) -> Tensor:
    return G * H_ab + (1.0 - G) * H_A


def gia_direction(H_A: Tensor, H_B: Tensor, p: dict[str, Tensor], eps: float = 1e-5) -> Tensor:
    H_ab = cross_attend(H_A, H_B, p)
    return gated_mix(gate(H_ab, p, eps), H_ab, H_A)


def gia_fuse(H_A: Tensor, H_B: Tensor, p_ab: dict[str, Tensor], p_ba: dict[str, Tensor],
             eps: float = 1e-5) -> tuple[Tensor, Tensor]:
    """One GIA block: returns (A gated by B, B gated by A)."""
    return gia_direction(H_A, H_B, p_ab, eps), gia_direction(H_B, H_A, p_ba, eps)


def msr_forward(H: dict[str, Tensor], params: ParamStore, eps: float = 1e-5) -> MsrOutput:
    gated: dict[str, list[Tensor]] = {m: [] for m in MODALITIES}
    for a, b in PAIRS:
        out_a, out_b = gia_fuse(H[a], H[b], subset(params, direction_key(a, b)),
                                subset(params, direction_key(b, a)), eps)
        gated[a].append(out_a)
        gated[b].append(out_b)
    per = {m: gated[m][0] + gated[m][1] for m in MODALITIES}
    return MsrOutput(concat=T.concat_time(*(per[m] for m in MODALITIES)), **per)
