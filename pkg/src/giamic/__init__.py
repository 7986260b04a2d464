"""Gated interactive attention + modality-invariant constraints for tri-modal fusion."""
from .config import ModelConfig, TrainConfig
from .data import Dataset, SynthSpec, generate, read_features, split, write_features
from .model import forward, init_params
from .train import alignment_report, evaluate, train

__version__ = "0.1.0"

__all__ = ["ModelConfig", "TrainConfig", "Dataset", "SynthSpec", "generate", "read_features", "split",
           "write_features", "forward", "init_params", "alignment_report", "evaluate", "train"]
