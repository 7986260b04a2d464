from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ConfigError

MODALITIES = ("V", "S", "T")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions. Ablation switches live on TrainConfig."""

    d: int = 64
    n_heads: int = 4
    ffn_mult: int = 4
    raw_dims: tuple[int, int, int] = (32, 32, 24)
    n_classes: int = 4
    share_extractor: bool = False
    positional_encoding: bool = False
    refine_ksize: int = 3
    refine_stride: int = 1
    ln_eps: float = 1e-5

    def validate(self) -> ModelConfig:
        if self.d < 1 or self.n_heads < 1:
            raise ConfigError("d and n_heads must be positive")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} is not divisible by n_heads={self.n_heads}")
        if len(self.raw_dims) != 3 or min(self.raw_dims) < 1:
            raise ConfigError(f"raw_dims must be three positive ints, got {self.raw_dims}")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 emotion classes")
        if self.refine_ksize < 1 or self.refine_stride < 1:
            raise ConfigError("refine_ksize and refine_stride must be >= 1")
        return self


# hidden size used in the original experiments; not a test default
PAPER_MODEL = ModelConfig(d=768, n_heads=12, raw_dims=(768, 1024, 768))


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    gamma: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    no_msr: bool = False
    no_mir: bool = False
    no_mic: bool = False
    # "drop": w/o MSR removes the GIA stage and the MSR segment of the fused
    # representation; "concat": keeps the raw per-modality concat in its place
    msr_ablation: str = "drop"
    reduction: str = "mean"
    dtype: str = "float64"

    def validate(self) -> TrainConfig:
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.msr_ablation not in ("drop", "concat"):
            raise ConfigError(f"msr_ablation must be 'drop' or 'concat', got {self.msr_ablation!r}")
        if self.reduction not in ("mean", "sum"):
            raise ConfigError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        return self

    @property
    def effective_gamma(self) -> float:
        return 0.0 if self.no_mic else self.gamma


# learning rate from the original large-encoder setup
PAPER_TRAIN = TrainConfig(lr=1e-5, batch_size=32, gamma=0.1)


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


def _field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in dataclasses.fields(cls)}


def _coerce(name: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"{name}: expected a boolean, got {value!r}")
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split()]
        try:
            return tuple(int(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a list of ints, got {value!r}") from None
    try:
        return type(default)(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: cannot interpret {value!r} as {type(default).__name__}") from None


def resolve(overrides: dict[str, Any] | None = None, base: RunConfig | None = None) -> RunConfig:
    """Apply flat ``key -> value`` overrides on top of ``base``.

    Keys belong to either ModelConfig or TrainConfig (the names are disjoint).
    Unknown keys raise ConfigError.
    """
    base = base or RunConfig()
    model_keys = _field_types(ModelConfig)
    train_keys = _field_types(TrainConfig)
    m_up, t_up = {}, {}
    for key, value in (overrides or {}).items():
        if key in model_keys:
            m_up[key] = _coerce(key, value, getattr(base.model, key))
        elif key in train_keys:
            t_up[key] = _coerce(key, value, getattr(base.train, key))
        else:
            raise ConfigError(f"unknown config key {key!r}")
    model = dataclasses.replace(base.model, **m_up).validate()
    train = dataclasses.replace(base.train, **t_up).validate()
    return RunConfig(model, train)


def load_config_file(path: str | Path) -> dict[str, Any]:
    """Read a flat JSON object of config keys. Nested values are rejected."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config file must hold a single flat object")
    for key, value in raw.items():
        if isinstance(value, dict):
            raise ConfigError(f"config key {key!r}: nested objects are not allowed")
    return raw


def snapshot(cfg: RunConfig) -> dict[str, Any]:
    out = dataclasses.asdict(cfg.model)
    out.update(dataclasses.asdict(cfg.train))
    out["raw_dims"] = list(cfg.model.raw_dims)
    return out
