"""Finite-difference verification of every parameter group of a tiny model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig, TrainConfig
from .model import init_params, loss_for_batch
from .params import ParamStore, groups, zero_grads

TINY_MODEL = ModelConfig(d=4, n_heads=2, raw_dims=(3, 4, 5), n_classes=3)
TINY_LENGTHS = (2, 2, 2)
THRESHOLD = 1e-4


@dataclass
class GroupResult:
    group: str
    n_entries: int
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < THRESHOLD


def tiny_batch(cfg: ModelConfig = TINY_MODEL, lengths=TINY_LENGTHS, batch: int = 2, seed: int = 0):
    rng = np.random.default_rng(seed)
    seqs = {m: rng.standard_normal((batch, t, d)) for m, t, d in zip(MODALITIES, lengths, cfg.raw_dims)}
    labels = rng.integers(0, cfg.n_classes, size=batch)
    return seqs, labels


def rel_err(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))


def run_gradcheck(cfg: ModelConfig = TINY_MODEL, train_cfg: TrainConfig | None = None, seed: int = 0,
                  h: float = 1e-5, corrupt: str | None = None,
                  params: ParamStore | None = None) -> list[GroupResult]:
    """Compare backprop against central differences on the joint loss.

    ``corrupt`` names a group whose analytic gradient is deliberately
    perturbed, to prove the check can fail.
    """
    train_cfg = train_cfg or TrainConfig(gamma=0.1)
    params = params if params is not None else init_params(cfg, seed)
    seqs, labels = tiny_batch(cfg, seed=seed + 1)
    inputs = {m: T.Tensor(v) for m, v in seqs.items()}

    def loss_value() -> float:
        with T.no_grad():
            return loss_for_batch(params, cfg, inputs, labels, train_cfg)[1].total.item()

    zero_grads(params)
    _, losses = loss_for_batch(params, cfg, inputs, labels, train_cfg)
    T.backward(losses.total, params.values())
    analytic = {k: p.grad.copy() for k, p in params.items()}
    zero_grads(params)

    results = []
    for group, names in groups(params).items():
        worst, count = 0.0, 0
        for name in names:
            p = params[name]
            numeric = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_value()
                flat[i] = orig - h
                down = loss_value()
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * h)
            grad = analytic[name]
            if corrupt == group:
                grad = grad + 1e-2
            worst = max(worst, float(rel_err(grad, numeric).max()))
            count += flat.size
        results.append(GroupResult(group, count, worst))
    return results
