"""Classification head, cross-entropy loss and the joint objective."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import ModelConfig
from .errors import ConfigError, DimensionError
from .params import ParamStore, prefixed, uniform
from .tensor import Tensor

LOG_FLOOR = 1e-12


def init_head(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    return prefixed("head", {"W_c": uniform(rng, (cfg.d, cfg.n_classes), cfg.d),
                             "b_c": np.zeros(cfg.n_classes)})


def classify(H_fus: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Class probabilities, shape (..., e)."""
    if H_fus.shape[-1] != p["W_c"].shape[0]:
        raise DimensionError(f"classify: width {H_fus.shape[-1]} vs head rows {p['W_c'].shape[0]}")
    logits = T.affine(T.avg_pool_time(H_fus), p["W_c"], p["b_c"])  # (..., 1, e)
    probs = T.softmax_rows(logits)
    return T.reshape(probs, probs.shape[:-2] + probs.shape[-1:])


def er_loss(probs: Tensor, labels, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of the ground-truth class, log floored at 1e-12."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if probs.ndim == 1:
        probs = T.reshape(probs, (1, probs.shape[0]))
    e = probs.shape[-1]
    if labels.size and (labels.min() < 0 or labels.max() >= e):
        raise ValueError(f"label out of range for {e} classes: {labels}")
    nll = T.scale(T.log(T.pick(probs, labels), floor=LOG_FLOOR), -1.0)
    if reduction == "sum":
        return T.sum(nll)
    if reduction == "mean":
        return T.mean(nll)
    raise ConfigError(f"unknown reduction {reduction!r}")


@dataclass
class LossBreakdown:
    er: Tensor
    mir: Tensor
    total: Tensor
    gamma: float


def joint_loss(L_ER: Tensor, L_MIR: Tensor, gamma: float) -> LossBreakdown:
    if gamma < 0:
        raise ConfigError(f"gamma must be >= 0, got {gamma}")
    return LossBreakdown(L_ER, L_MIR, L_ER + T.scale(L_MIR, gamma), gamma)
