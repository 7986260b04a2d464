"""Full forward pass: encoder -> MSR -> MIR -> head, with ablation rewiring."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig, TrainConfig
from .encoder import PreEmbed, encode, init_encoder
from .head import LossBreakdown, classify, er_loss, init_head, joint_loss
from .mir import MirOutput, init_mig, mic_loss, mir_forward, pairwise_skl
from .msr import MsrOutput, init_gia, msr_forward
from .params import ParamStore, subset
from .tensor import Tensor


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    cfg.validate()
    rng = np.random.default_rng(seed)
    params: ParamStore = {}
    params.update(init_encoder(cfg, rng))
    params.update(init_gia(cfg, rng))
    params.update(init_mig(cfg, rng))
    params.update(init_head(cfg, rng))
    return params


@dataclass
class ForwardOutput:
    pre: PreEmbed
    msr: MsrOutput | None
    mir: MirOutput
    fus: Tensor
    probs: Tensor

    def mig(self) -> dict[str, Tensor]:
        return {m: self.mir.mig(m) for m in MODALITIES}


def forward(params: ParamStore, cfg: ModelConfig, seqs: dict[str, Tensor], *,
            no_msr: bool = False, no_mir: bool = False, msr_ablation: str = "drop") -> ForwardOutput:
    """Run the model on a batch of raw sequences keyed by modality.

    Ablations: ``no_msr`` feeds H_M straight into the MIG blocks and drops the
    MSR segment from the fused output (``msr_ablation="concat"`` keeps the raw
    H_VST there instead); ``no_mir`` fuses only the MSR. MIG outputs are
    still computed under ``no_mir`` so alignment can be reported, but they
    are cut from the graph.
    """
    pre = encode(seqs, params, cfg)
    H = {m: pre[m] for m in MODALITIES}
    msr = None
    if no_msr:
        keys = H
        seg = T.concat_time(*(H[m] for m in MODALITIES)) if msr_ablation == "concat" else None
    else:
        msr = msr_forward(H, params, cfg.ln_eps)
        keys = {m: msr[m] for m in MODALITIES}
        seg = msr.concat
    if no_mir:
        with T.no_grad():
            mir = mir_forward(H, keys, seg, params, cfg)
        fus = seg if seg is not None else T.concat_time(*(H[m] for m in MODALITIES))
    else:
        mir = mir_forward(H, keys, seg, params, cfg)
        fus = mir.fus
    probs = classify(fus, subset(params, "head"))
    return ForwardOutput(pre, msr, mir, fus, probs)


def compute_loss(out: ForwardOutput, labels, gamma: float, *, no_mir: bool = False,
                 reduction: str = "mean") -> LossBreakdown:
    L_ER = er_loss(out.probs, labels, reduction)
    if no_mir:
        L_MIR = T.Tensor(0.0, dtype=L_ER.dtype)
    else:
        per_sample = mic_loss(*(out.mir.mig(m) for m in MODALITIES))
        L_MIR = T.sum(per_sample) if reduction == "sum" else T.mean(per_sample)
    return joint_loss(L_ER, L_MIR, gamma)


def loss_for_batch(params: ParamStore, cfg: ModelConfig, seqs: dict[str, Tensor], labels,
                   tc: TrainConfig) -> tuple[ForwardOutput, LossBreakdown]:
    out = forward(params, cfg, seqs, no_msr=tc.no_msr, no_mir=tc.no_mir, msr_ablation=tc.msr_ablation)
    return out, compute_loss(out, labels, tc.effective_gamma, no_mir=tc.no_mir, reduction=tc.reduction)


def skl_triple(out: ForwardOutput) -> np.ndarray:
    """Per-sample pairwise SKL (VS, ST, TV) as a (batch, 3) array."""
    with T.no_grad():
        pair = pairwise_skl({m: out.mir.mig(m).detach() for m in MODALITIES})
    return np.stack([np.atleast_1d(pair[k].data) for k in ("VS", "ST", "TV")], axis=-1)
