"""Modality-invariant representations: MIG blocks, fusion and the SKL constraint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import MODALITIES, ModelConfig
from .errors import ContractError, DimensionError
from .msr import attend
from .params import ParamStore, prefixed, subset, uniform
from .tensor import Tensor


@dataclass
class MigOutput:
    share: Tensor
    masked: Tensor
    mig: Tensor


@dataclass
class MirOutput:
    blocks: dict[str, MigOutput]
    mir: Tensor  # 3(k+m+n) x d
    fus: Tensor  # 4(k+m+n) x d with MSR, fewer rows under ablations

    def mig(self, m: str) -> Tensor:
        return self.blocks[m].mig


def init_mig(cfg: ModelConfig, rng: np.random.Generator) -> ParamStore:
    d, ks = cfg.d, cfg.refine_ksize
    params: ParamStore = {}
    for m in MODALITIES:
        params.update(prefixed(f"mig.{m}", {
            "W_Q": uniform(rng, (d, d), d),
            "W_K": uniform(rng, (d, d), d),
            "W_V": uniform(rng, (d, d), d),
            "mask.kernel": uniform(rng, (1, 2 * d, d), 2 * d),
            "mask.bias": np.zeros(d),
            "mask.slope": np.full(d, 0.25),
            "refine.kernel": uniform(rng, (ks, d, d), ks * d),
            "refine.bias": np.zeros(d),
            "norm.gain": np.ones(d),
            "norm.bias": np.zeros(d),
        }))
    return params


def shared_query(H_V: Tensor, H_S: Tensor, H_T: Tensor) -> Tensor:
    return T.concat_time(H_V, H_S, H_T)


def segment_offsets(lengths) -> dict[str, tuple[int, int]]:
    """Row span of each modality inside the V, S, T concatenation."""
    spans, start = {}, 0
    for m, n in zip(MODALITIES, lengths):
        spans[m] = (start, start + n)
        start += n
    return spans


def align(H_M: Tensor, modality: str, lengths) -> Tensor:
    """Place H_M on a zero canvas of length k+m+n at its own segment."""
    start, stop = segment_offsets(lengths)[modality]
    if H_M.shape[-2] != stop - start:
        raise ContractError(f"align: {modality} has {H_M.shape[-2]} rows, segment expects {stop - start}")
    return T.pad_time(H_M, start, sum(lengths) - stop)


def mig_attend(H_VST: Tensor, H_M: Tensor, p: dict[str, Tensor]) -> Tensor:
    return attend(H_VST, H_M, p["W_Q"], p["W_K"], p["W_V"])


def mig_mask(H_share: Tensor, H_M_aligned: Tensor, H_VST: Tensor, p: dict[str, Tensor]) -> Tensor:
    """H_share * sigmoid(PReLU(conv1x1([aligned H_M, H_VST])))."""
    if H_M_aligned.shape != H_VST.shape or H_share.shape != H_VST.shape:
        raise ContractError(
            f"mig_mask: shapes {H_share.shape}, {H_M_aligned.shape}, {H_VST.shape} must agree")
    z = T.conv1d_time(T.concat_feat(H_M_aligned, H_VST), p["mask.kernel"], p["mask.bias"])
    return H_share * T.sigmoid(T.prelu(z, p["mask.slope"]))


def mig_refine(H_b: Tensor, H_VST: Tensor, p: dict[str, Tensor], stride: int = 1,
               eps: float = 1e-5) -> Tensor:
    if H_b.shape != H_VST.shape:
        raise DimensionError(f"mig_refine: {H_b.shape} vs {H_VST.shape}")
    c = T.conv1d_time(H_b, p["refine.kernel"], p["refine.bias"], stride=stride, padding="same")
    t = H_VST.shape[-2]
    if c.shape[-2] != t:
        # nearest-neighbour stretch back to the residual length
        c = T.take_time(c, (np.arange(t) * c.shape[-2]) // t)
    return T.layer_norm_rows(H_VST + c, p["norm.gain"], p["norm.bias"], eps)


def mig_block(H_VST: Tensor, H_M: Tensor, modality: str, lengths, p: dict[str, Tensor],
              cfg: ModelConfig) -> MigOutput:
    share = mig_attend(H_VST, H_M, p)
    masked = mig_mask(share, align(H_M, modality, lengths), H_VST, p)
    out = mig_refine(masked, H_VST, p, stride=cfg.refine_stride, eps=cfg.ln_eps)
    return MigOutput(share, masked, out)


def mir_forward(H: dict[str, Tensor], msr: dict[str, Tensor], msr_concat: Tensor | None,
                params: ParamStore, cfg: ModelConfig) -> MirOutput:
    """Three MIG blocks, their concatenation, and fusion with the MSR segment.

    ``msr`` supplies the per-modality keys/values; ``msr_concat`` is the MSR
    segment prepended to the fused output (``None`` drops it).
    """
    lengths = tuple(H[m].shape[-2] for m in MODALITIES)
    H_VST = shared_query(*(H[m] for m in MODALITIES))
    blocks = {m: mig_block(H_VST, msr[m], m, lengths, subset(params, f"mig.{m}"), cfg)
              for m in MODALITIES}
    mir = T.concat_time(*(blocks[m].mig for m in MODALITIES))
    fus = mir if msr_concat is None else T.concat_time(msr_concat, mir)
    return MirOutput(blocks, mir, fus)


def skl(P_rep: Tensor, Q_rep: Tensor) -> Tensor:
    """Symmetric KL between row-wise feature softmaxes, averaged over rows.

    Uses 1/2 * sum (p - q)(log p - log q), which equals 1/2 (KL(p||q) + KL(q||p))
    term by term, is exactly symmetric, and is nonnegative per entry.
    Leading batch axes are kept.
    """
    if P_rep.shape != Q_rep.shape:
        raise DimensionError(f"skl: shapes {P_rep.shape} and {Q_rep.shape} differ")
    logp, logq = T.log_softmax_rows(P_rep), T.log_softmax_rows(Q_rep)
    rows = T.sum((T.exp(logp) - T.exp(logq)) * (logp - logq), axis=-1)
    return T.scale(T.mean(rows, axis=-1), 0.5)


def pairwise_skl(mig: dict[str, Tensor]) -> dict[str, Tensor]:
    return {"VS": skl(mig["V"], mig["S"]), "ST": skl(mig["S"], mig["T"]), "TV": skl(mig["T"], mig["V"])}


def mic_loss(H_V: Tensor, H_S: Tensor, H_T: Tensor) -> Tensor:
    pair = pairwise_skl({"V": H_V, "S": H_S, "T": H_T})
    return pair["VS"] + pair["ST"] + pair["TV"]
