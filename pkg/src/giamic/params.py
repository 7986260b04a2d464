"""Parameter store helpers: initialisation, grouping, persistence."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .config import ModelConfig
from .tensor import Tensor, parameter

ParamStore = dict[str, Tensor]


def uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def subset(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """Entries under ``prefix.``, keyed by the remainder of the name."""
    head = prefix + "."
    return {k[len(head):]: v for k, v in params.items() if k.startswith(head)}


def prefixed(prefix: str, entries: Mapping[str, np.ndarray]) -> ParamStore:
    return {f"{prefix}.{k}": parameter(v, name=f"{prefix}.{k}") for k, v in entries.items()}


def param_group(name: str) -> str:
    """Map a parameter name to its gradcheck group.

    ``encoder.*`` and ``head.*`` are one group each; GIA directions and MIG
    blocks are grouped per direction / per modality.
    """
    parts = name.split(".")
    if parts[0] in ("gia", "mig"):
        return ".".join(parts[:2])
    return parts[0]


def groups(params: Mapping[str, Tensor]) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for name in params:
        out.setdefault(param_group(name), []).append(name)
    return out


def cast(params: ParamStore, dtype) -> ParamStore:
    return {k: parameter(v.data.astype(dtype), name=k) for k, v in params.items()}


def clone(params: Mapping[str, Tensor]) -> ParamStore:
    return {k: parameter(v.data.copy(), name=k) for k, v in params.items()}


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def save_params(path: str | Path, params: Mapping[str, Tensor], cfg: ModelConfig) -> None:
    arrays = {k: v.data for k, v in params.items()}
    meta = json.dumps({"model_config": {**cfg.__dict__, "raw_dims": list(cfg.raw_dims)}})
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(meta), **arrays)


def load_params(path: str | Path) -> tuple[ParamStore, ModelConfig]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        params = {k: parameter(z[k].copy(), name=k) for k in z.files if k != "__meta__"}
    mc = meta["model_config"]
    mc["raw_dims"] = tuple(mc["raw_dims"])
    return params, ModelConfig(**mc).validate()
