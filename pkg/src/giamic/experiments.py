"""Scaled-down experiments: convergence, MIC alignment effect, ablation sweep."""
from __future__ import annotations

import dataclasses
import logging
import statistics
import time
from dataclasses import dataclass
from typing import Sequence


from .config import ModelConfig, RunConfig, TrainConfig
from .data import Dataset, SynthSpec, generate, split
from .train import alignment_report, evaluate, train

log = logging.getLogger(__name__)

ABLATIONS = {"full": {}, "no_msr": {"no_msr": True}, "no_mir": {"no_mir": True}, "no_mic": {"no_mic": True}}

# default separable benchmark
SEPARABLE = SynthSpec(n_samples=512, n_classes=4, alpha=2.0, beta=(0.5, 0.5, 0.5), delta=0.5, noise_std=0.1)
# shared and modality-specific cues both carry label information; heavier noise
MIXED = SynthSpec(n_samples=320, n_classes=4, alpha=0.5, beta=(0.5, 0.5, 0.5), delta=1.0, noise_std=3.0)


@dataclass
class ConvergenceResult:
    train_ua: float
    heldout_ua: float
    epochs: int
    seconds: float
    history: list


def convergence(spec: SynthSpec = SEPARABLE, model: ModelConfig | None = None,
                tc: TrainConfig | None = None, folds: int = 5) -> ConvergenceResult:
    ds = generate(spec)
    model = model or ModelConfig(raw_dims=spec.raw_dims, n_classes=spec.n_classes)
    tc = tc or TrainConfig(epochs=20)
    tr, te = split(ds, folds, 0)
    t0 = time.perf_counter()
    params, history = train(tr, model, tc)
    seconds = time.perf_counter() - t0
    return ConvergenceResult(evaluate(params, tr, model, tc).ua, evaluate(params, te, model, tc).ua,
                             tc.epochs, seconds, history)


@dataclass
class PairedAlignment:
    seed: int
    skl_with_mic: float
    skl_without_mic: float

    @property
    def improved(self) -> bool:
        return self.skl_with_mic < self.skl_without_mic


def mic_effect(dataset: Dataset, cfg: RunConfig, seeds, gamma: float = 0.1,
               folds: int = 5) -> list[PairedAlignment]:
    """Paired runs differing only in gamma; SKL measured on the held-out fold."""
    tr, te = split(dataset, folds, 0)
    out = []
    for seed in seeds:
        sums = []
        for g in (gamma, 0.0):
            tc = dataclasses.replace(cfg.train, seed=seed, gamma=g, no_mic=False)
            params, _ = train(tr, cfg.model, tc)
            sums.append(alignment_report(params, te, cfg.model, tc).total)
        out.append(PairedAlignment(seed, *sums))
    return out


def run_ablation(dataset, base: RunConfig, seeds: Sequence[int], folds: int = 5, fold_index: int = 0):
    """Train full model and the three ablations per seed; score on a held-out fold."""
    train_set, test_set = split(dataset, folds, fold_index)
    rows = []
    for seed in seeds:
        for variant, flags in ABLATIONS.items():
            tc = dataclasses.replace(base.train, seed=seed, **flags)
            params, _ = train(train_set, base.model, tc)
            rec = evaluate(params, test_set, base.model, tc)
            rows.append({"variant": variant, "seed": seed, "wa": rec.wa, "ua": rec.ua})
            log.info("seed %d %-7s WA=%.4f UA=%.4f", seed, variant, rec.wa, rec.ua)
    medians = {v: {"wa": statistics.median(r["wa"] for r in rows if r["variant"] == v),
                   "ua": statistics.median(r["ua"] for r in rows if r["variant"] == v)}
               for v in ABLATIONS}
    return rows, medians
