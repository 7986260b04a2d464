"""Training loop, Adam, evaluation metrics and the alignment report."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig, TrainConfig
from .data import Dataset, write_features
from .errors import ContractError, NumericalError
from .model import forward, init_params, loss_for_batch, skl_triple
from .params import ParamStore, cast, clone, zero_grads
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every parameter, in place."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"parameter {name} has no gradient")
        if not np.isfinite(p.grad).all():
            raise NumericalError(f"non-finite gradient in parameter {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class MetricsRecord:
    epoch: int
    l_er: float
    l_mir: float
    l_total: float
    wa: float
    ua: float
    skl_vs: float
    skl_st: float
    skl_tv: float

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def skl_sum(self) -> float:
        return self.skl_vs + self.skl_st + self.skl_tv


def wa_ua(predictions, labels, n_classes: int | None = None) -> tuple[float, float]:
    """Weighted accuracy and unweighted (mean per-class recall) accuracy.

    Classes with no samples are left out of the UA mean.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ContractError("cannot score an empty set")
    correct = predictions == labels
    wa = float(correct.mean())
    classes = np.unique(labels) if n_classes is None else [c for c in range(n_classes) if (labels == c).any()]
    ua = float(np.mean([correct[labels == c].mean() for c in classes]))
    return wa, ua


def _to_tensors(seqs: Mapping[str, np.ndarray], dtype) -> dict[str, Tensor]:
    return {m: Tensor(seqs[m], dtype=dtype) for m in MODALITIES}


class _Accumulator:
    def __init__(self):
        self.n = 0
        self.er = self.mir = self.total = 0.0
        self.skl = np.zeros(3)
        self.preds: list[np.ndarray] = []
        self.labels: list[np.ndarray] = []

    def add(self, out, losses, labels, reduction: str):
        size = len(labels)
        w = size if reduction == "mean" else 1.0
        self.n += size
        self.er += w * float(losses.er.data)
        self.mir += w * float(losses.mir.data)
        self.total += w * float(losses.total.data)
        self.skl += skl_triple(out).sum(axis=0)
        self.preds.append(out.probs.data.argmax(axis=-1))
        self.labels.append(labels)

    def record(self, epoch: int, n_classes: int) -> MetricsRecord:
        wa, ua = wa_ua(np.concatenate(self.preds), np.concatenate(self.labels), n_classes)
        s = self.skl / self.n
        return MetricsRecord(epoch, self.er / self.n, self.mir / self.n, self.total / self.n,
                             wa, ua, float(s[0]), float(s[1]), float(s[2]))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    """Sample order for one epoch, derived from (seed, epoch) alone."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train(dataset: Dataset, model_cfg: ModelConfig, train_cfg: TrainConfig, *,
          params: ParamStore | None = None,
          on_epoch: Callable[[MetricsRecord], None] | None = None) -> tuple[ParamStore, list[MetricsRecord]]:
    """Optimise the joint objective with Adam.

    Each epoch's MetricsRecord summarises the training batches of that
    epoch (losses, and WA/UA of the predictions made while training).
    Use :func:`evaluate` for post-hoc scores on any split.
    """
    model_cfg.validate()
    train_cfg.validate()
    if len(dataset) == 0:
        raise ContractError("cannot train on an empty dataset")
    if dataset.raw_dims != model_cfg.raw_dims:
        raise ContractError(f"dataset raw dims {dataset.raw_dims} != model raw dims {model_cfg.raw_dims}")
    if dataset.n_classes != model_cfg.n_classes:
        raise ContractError(f"dataset has {dataset.n_classes} classes, model expects {model_cfg.n_classes}")
    dtype = np.dtype(train_cfg.dtype)
    params = init_params(model_cfg, train_cfg.seed) if params is None else clone(params)
    params = cast(params, dtype)
    state = AdamState()
    history: list[MetricsRecord] = []
    for epoch in range(train_cfg.epochs):
        acc = _Accumulator()
        order = epoch_order(train_cfg.seed, epoch, len(dataset))
        for b, batch in enumerate(dataset.batches(train_cfg.batch_size, order)):
            zero_grads(params)
            try:
                out, losses = loss_for_batch(params, model_cfg, _to_tensors(batch.seqs, dtype),
                                             batch.labels, train_cfg)
                T.backward(losses.total, params.values())
                adam_step(params, state, train_cfg.lr, train_cfg.beta1, train_cfg.beta2, train_cfg.adam_eps)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch} batch {b}: {exc}") from exc
            acc.add(out, losses, batch.labels, train_cfg.reduction)
        rec = acc.record(epoch, model_cfg.n_classes)
        history.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        if on_epoch is not None:
            on_epoch(rec)
    zero_grads(params)
    return params, history


def evaluate(params: ParamStore, dataset: Dataset, model_cfg: ModelConfig,
             train_cfg: TrainConfig | None = None, batch_size: int = 128) -> MetricsRecord:
    """Losses, WA/UA and mean pairwise SKL over ``dataset`` (epoch field is -1)."""
    train_cfg = train_cfg or TrainConfig()
    if len(dataset) == 0:
        raise ContractError("cannot evaluate an empty dataset")
    dtype = next(iter(params.values())).dtype
    acc = _Accumulator()
    with T.no_grad():
        for batch in dataset.batches(batch_size):
            out, losses = loss_for_batch(params, model_cfg, _to_tensors(batch.seqs, dtype),
                                         batch.labels, train_cfg)
            acc.add(out, losses, batch.labels, train_cfg.reduction)
    return acc.record(-1, model_cfg.n_classes)


@dataclass
class AlignmentReport:
    skl_vs: float
    skl_st: float
    skl_tv: float
    embeddings: np.ndarray  # (n, 3, d) time-pooled MIG outputs, order V, S, T
    labels: np.ndarray

    @property
    def triple(self) -> tuple[float, float, float]:
        return self.skl_vs, self.skl_st, self.skl_tv

    @property
    def total(self) -> float:
        return self.skl_vs + self.skl_st + self.skl_tv

    def as_dataset(self, n_classes: int) -> Dataset:
        emb = self.embeddings.astype(np.float32)
        return Dataset(emb[:, 0:1], emb[:, 1:2], emb[:, 2:3], self.labels, n_classes)


def alignment_report(params: ParamStore, dataset: Dataset, model_cfg: ModelConfig,
                     train_cfg: TrainConfig | None = None, export_path: str | Path | None = None,
                     batch_size: int = 128) -> AlignmentReport:
    """Mean pairwise SKL between per-modality MIG outputs, plus pooled embeddings.

    With ``export_path`` the pooled embeddings are written as a GMIC file
    holding one length-1 sequence per modality per sample.
    """
    train_cfg = train_cfg or TrainConfig()
    if len(dataset) == 0:
        raise ContractError("cannot report alignment on an empty dataset")
    dtype = next(iter(params.values())).dtype
    skl_sum = np.zeros(3)
    pooled = []
    with T.no_grad():
        for batch in dataset.batches(batch_size):
            out = forward(params, model_cfg, _to_tensors(batch.seqs, dtype), no_msr=train_cfg.no_msr,
                          no_mir=train_cfg.no_mir, msr_ablation=train_cfg.msr_ablation)
            skl_sum += skl_triple(out).sum(axis=0)
            pooled.append(np.stack([out.mir.mig(m).data.mean(axis=-2) for m in MODALITIES], axis=1))
    s = skl_sum / len(dataset)
    report = AlignmentReport(float(s[0]), float(s[1]), float(s[2]), np.concatenate(pooled), dataset.labels.copy())
    if export_path is not None:
        write_features(report.as_dataset(dataset.n_classes), export_path)
    return report
