"""Synthetic tri-modal datasets and the GMIC feature-file format."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .config import MODALITIES
from .errors import (BadMagicError, ConfigError, DimensionOverflowError, FormatError,
                     TruncatedFileError, VersionMismatchError)

MAGIC = b"GMIC"
VERSION = 1
# per-record element cap; anything larger is treated as a corrupt header
MAX_ELEMENTS = 1 << 26


@dataclass
class Dataset:
    """Aligned tri-modal samples. Each modality is an (n, t, d) float32 array."""

    V: np.ndarray
    S: np.ndarray
    T: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        for m in MODALITIES:
            arr = self[m]
            if arr.ndim != 3 or arr.shape[0] != n:
                raise ValueError(f"{m}: expected ({n}, t, d) array, got {arr.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __getitem__(self, m: str) -> np.ndarray:
        return getattr(self, m)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def lengths(self) -> tuple[int, int, int]:
        return tuple(self[m].shape[1] for m in MODALITIES)

    @property
    def raw_dims(self) -> tuple[int, int, int]:
        return tuple(self[m].shape[2] for m in MODALITIES)

    def subset(self, index) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(self.V[index], self.S[index], self.T[index], self.labels[index], self.n_classes)

    def batches(self, batch_size: int, order: np.ndarray | None = None) -> Iterator[Batch]:
        order = np.arange(len(self)) if order is None else order
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            yield Batch({m: self[m][idx] for m in MODALITIES}, self.labels[idx])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<II", len(self), self.n_classes))
        for m in MODALITIES:
            h.update(np.ascontiguousarray(self[m], dtype="<f4").tobytes())
        h.update(self.labels.astype("<u4").tobytes())
        return h.hexdigest()


@dataclass
class Batch:
    seqs: dict[str, np.ndarray]
    labels: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class SynthSpec:
    """Generator knobs.

    Each sample of class c gets, per time step, ``alpha * u_c`` (shared
    across modalities on their first ``min(raw_dims)`` coordinates) plus
    ``beta_M * v_{c,M}`` (independent per modality), is pushed through the
    modality's domain-shift map ``x -> x (I + delta R_M) + delta mu_M`` and
    receives Gaussian noise.
    """

    n_samples: int = 512
    n_classes: int = 4
    lengths: tuple[int, int, int] = (8, 8, 8)
    raw_dims: tuple[int, int, int] = (32, 32, 24)
    alpha: float = 2.0
    beta: tuple[float, float, float] = (0.5, 0.5, 0.5)
    delta: float = 0.5
    noise_std: float = 0.1
    seed: int = 0
    priors: tuple[float, ...] | None = None

    def validate(self) -> SynthSpec:
        if self.n_samples < 0:
            raise ConfigError("n_samples must be >= 0")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if min(self.lengths) < 1 or min(self.raw_dims) < 1:
            raise ConfigError("lengths and raw_dims must be positive")
        if self.alpha < 0 or min(self.beta) < 0 or self.delta < 0 or self.noise_std < 0:
            raise ConfigError("alpha, beta, delta and noise_std must be >= 0")
        if self.alpha == 0 and max(self.beta) == 0 and self.noise_std == 0:
            raise ConfigError("degenerate spec: no signal and no noise")
        if self.priors is not None:
            p = np.asarray(self.priors, dtype=float)
            if len(p) != self.n_classes or (p < 0).any() or p.sum() <= 0:
                raise ConfigError("priors must be n_classes nonnegative weights")
        return self


def _unit_rows(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def class_counts(n: int, e: int, priors=None) -> np.ndarray:
    """Per-class sample counts; largest-remainder rounding of ``n * priors``."""
    p = np.full(e, 1.0 / e) if priors is None else np.asarray(priors, float) / np.sum(priors)
    raw = n * p
    counts = np.floor(raw).astype(np.int64)
    short = n - counts.sum()
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:short]] += 1
    return counts


def generate(spec: SynthSpec) -> Dataset:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    e, n = spec.n_classes, spec.n_samples
    d_shared = min(spec.raw_dims)
    shared_dirs = _unit_rows(rng, e, d_shared)
    specific = {m: _unit_rows(rng, e, d) for m, d in zip(MODALITIES, spec.raw_dims)}
    shift = {}
    for m, d in zip(MODALITIES, spec.raw_dims):
        mix = np.eye(d) + spec.delta * rng.standard_normal((d, d)) / np.sqrt(d)
        shift[m] = (mix, spec.delta * rng.standard_normal(d))

    labels = np.repeat(np.arange(e), class_counts(n, e, spec.priors))
    labels = rng.permutation(labels)

    # per-time-step signal amplitude, shared by all modalities, keeps
    # sequences from being constant
    amp_all = rng.uniform(0.5, 1.5, size=(n, max(spec.lengths), 1))
    out = {}
    for m, t, d, beta in zip(MODALITIES, spec.lengths, spec.raw_dims, spec.beta):
        amp = amp_all[:, :t]
        shared = np.zeros((e, d))
        shared[:, :d_shared] = shared_dirs
        clean = amp * (spec.alpha * shared[labels] + beta * specific[m][labels])[:, None, :]
        mix, offset = shift[m]
        x = clean @ mix + offset + spec.noise_std * rng.standard_normal((n, t, d))
        out[m] = x.astype(np.float32)
    return Dataset(out["V"], out["S"], out["T"], labels, e)


def split(dataset: Dataset, folds: int, fold_index: int) -> tuple[Dataset, Dataset]:
    """Contiguous-block k-fold split; earlier folds take the remainder."""
    if folds < 2 or not 0 <= fold_index < folds:
        raise ConfigError(f"invalid fold {fold_index} of {folds}")
    n = len(dataset)
    sizes = [n // folds + (1 if i < n % folds else 0) for i in range(folds)]
    start = sum(sizes[:fold_index])
    test = np.arange(start, start + sizes[fold_index])
    train = np.setdiff1d(np.arange(n), test)
    return dataset.subset(train), dataset.subset(test)


# ---------------------------------------------------------------------------
# GMIC binary format


def write_features(dataset: Dataset, path: str | Path) -> None:
    """Write little-endian GMIC: header, then per-sample label and V, S, T blocks."""
    parts = [MAGIC, struct.pack("<III", VERSION, len(dataset), dataset.n_classes)]
    arrays = [np.ascontiguousarray(dataset[m], dtype="<f4") for m in MODALITIES]
    for i, label in enumerate(dataset.labels):
        parts.append(struct.pack("<I", int(label)))
        for arr in arrays:
            t, d = arr.shape[1:]
            parts.append(struct.pack("<II", t, d))
            parts.append(arr[i].tobytes())
    Path(path).write_bytes(b"".join(parts))


def _read(buf: memoryview, pos: int, size: int, what: str) -> int:
    if pos + size > len(buf):
        raise TruncatedFileError(f"file ends inside {what} at byte {pos}")
    return pos + size


def read_features(path: str | Path) -> Dataset:
    buf = memoryview(Path(path).read_bytes())
    pos = _read(buf, 0, 4, "magic")
    if bytes(buf[:4]) != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    start, pos = pos, _read(buf, pos, 12, "header")
    version, n, e = struct.unpack_from("<III", buf, start)
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}")
    labels = np.empty(n, dtype=np.int64)
    blocks: dict[str, list[np.ndarray]] = {m: [] for m in MODALITIES}
    shapes: dict[str, tuple[int, int]] = {}
    for i in range(n):
        start, pos = pos, _read(buf, pos, 4, f"label of record {i}")
        labels[i] = struct.unpack_from("<I", buf, start)[0]
        for m in MODALITIES:
            start, pos = pos, _read(buf, pos, 8, f"{m} header of record {i}")
            t, d = struct.unpack_from("<II", buf, start)
            if t * d > MAX_ELEMENTS:
                raise DimensionOverflowError(f"record {i} {m}: {t}x{d} exceeds {MAX_ELEMENTS} elements")
            if shapes.setdefault(m, (t, d)) != (t, d):
                raise FormatError(f"record {i} {m}: shape {(t, d)} differs from {shapes[m]}")
            start, pos = pos, _read(buf, pos, 4 * t * d, f"{m} data of record {i}")
            blocks[m].append(np.frombuffer(buf, dtype="<f4", count=t * d, offset=start).reshape(t, d))
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes after {n} records")
    if n and labels.max() >= e:
        raise FormatError(f"label {labels.max()} out of range for {e} classes")
    arrays = {}
    for m in MODALITIES:
        if n:
            arrays[m] = np.stack(blocks[m]).astype(np.float32)
        else:
            arrays[m] = np.zeros((0, 0, 0), dtype=np.float32)
    return Dataset(arrays["V"], arrays["S"], arrays["T"], labels, e)


def dataset_from_arrays(V: Sequence, S: Sequence, T: Sequence, labels, n_classes: int) -> Dataset:
    return Dataset(np.asarray(V, np.float32), np.asarray(S, np.float32), np.asarray(T, np.float32),
                   np.asarray(labels), n_classes)
