"""Spectral classification datasets: loading, synthesis, splitting, resampling.

A dataset is a dense matrix of spectra (one row per instance, one column per
spectral data point) with integer class labels. Hold-out folds are produced
by seeded uniform shuffling; repeated resampling derives one independent seed
per run from a master seed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DataFormatError",
    "SpectralDataset",
    "FoldSplit",
    "SyntheticSpec",
    "load_csv",
    "write_csv",
    "split",
    "bootstrap_runs",
    "generate_synthetic",
]

LABEL_COLUMN = "label"


class DataFormatError(ValueError):
    """Raised when a dataset or matrix file violates its schema."""


@dataclass(frozen=True)
class SpectralDataset:
    """Immutable spectra matrix plus labels.

    ``spectra`` has shape (n_instances, feature_count); ``labels`` holds dense
    class indices in ``[0, n_classes)`` mapped in first-appearance order.
    """

    spectra: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]
    instance_ids: tuple[str, ...]

    def __post_init__(self):
        spectra = np.asarray(self.spectra, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "spectra", spectra)
        object.__setattr__(self, "labels", labels)
        if spectra.ndim != 2:
            raise ValueError(f"spectra must be 2-D, got shape {spectra.shape}")
        if not np.all(np.isfinite(spectra)):
            raise ValueError("spectra contain non-finite values")
        n = spectra.shape[0]
        if labels.shape != (n,):
            raise ValueError(
                f"labels length {labels.shape} does not match {n} instances"
            )
        k = len(self.class_names)
        if k < 1:
            raise ValueError("at least one class name required")
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels must lie in [0, {k})")
        if len(self.instance_ids) != n:
            raise ValueError("instance_ids length does not match instance count")
        if len(set(self.instance_ids)) != n:
            raise ValueError("instance_ids must be unique")
        spectra.setflags(write=False)
        labels.setflags(write=False)

    @property
    def n_instances(self) -> int:
        return self.spectra.shape[0]

    @property
    def feature_count(self) -> int:
        return self.spectra.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: np.ndarray) -> "SpectralDataset":
        """Row-selected copy preserving class names and instance ids."""
        indices = np.asarray(indices, dtype=np.int64)
        return SpectralDataset(
            spectra=self.spectra[indices].copy(),
            labels=self.labels[indices].copy(),
            class_names=self.class_names,
            instance_ids=tuple(self.instance_ids[i] for i in indices),
        )


@dataclass(frozen=True)
class FoldSplit:
    """Disjoint train/test index sets from one seeded shuffle."""

    train_indices: np.ndarray
    test_indices: np.ndarray
    train_ratio: float
    seed: int

    def __post_init__(self):
        train = np.asarray(self.train_indices, dtype=np.int64)
        test = np.asarray(self.test_indices, dtype=np.int64)
        object.__setattr__(self, "train_indices", train)
        object.__setattr__(self, "test_indices", test)
        if np.intersect1d(train, test).size:
            raise ValueError("train and test indices overlap")
        train.setflags(write=False)
        test.setflags(write=False)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a synthetic spectral dataset.

    Each class gets a fixed template of Gaussian peaks at class-specific
    random locations; every instance is its class template plus i.i.d.
    Gaussian noise.
    """

    n_classes: int
    instances_per_class: int
    feature_count: int
    peaks_per_class: int = 4
    peak_width: float = 10.0
    noise_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        for name in ("instances_per_class", "feature_count", "peaks_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not self.peak_width > 0:
            raise ValueError("peak_width must be > 0")
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValueError("noise_sigma must be finite and >= 0")


def load_csv(path) -> SpectralDataset:
    """Load a dataset CSV: feature columns then a final ``label`` column.

    Labels are mapped to dense indices in first-appearance order. Any row
    whose arity or numeric content is malformed raises :class:`DataFormatError`
    naming the offending line; rows are never silently dropped.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if len(header) < 2 or header[-1] != LABEL_COLUMN:
            raise DataFormatError(
                f"{path}: header must name feature columns then '{LABEL_COLUMN}'"
            )
        width = len(header)
        rows: list[list[float]] = []
        labels: list[int] = []
        class_names: list[str] = []
        class_index: dict[str, int] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {width} fields, got {len(row)}"
                )
            try:
                values = [float(v) for v in row[:-1]]
            except ValueError:
                bad = next(v for v in row[:-1] if not _is_number(v))
                raise DataFormatError(
                    f"{path}: line {lineno}: non-numeric intensity {bad!r}"
                ) from None
            if not all(math.isfinite(v) for v in values):
                raise DataFormatError(
                    f"{path}: line {lineno}: non-finite intensity"
                )
            name = row[-1]
            if name not in class_index:
                class_index[name] = len(class_names)
                class_names.append(name)
            rows.append(values)
            labels.append(class_index[name])
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    spectra = np.asarray(rows, dtype=np.float64)
    return SpectralDataset(
        spectra=spectra,
        labels=np.asarray(labels, dtype=np.int64),
        class_names=tuple(class_names),
        instance_ids=_default_ids(len(rows)),
    )


def write_csv(ds: SpectralDataset, path) -> None:
    """Write a dataset in the canonical ``f0,...,f{d-1},label`` layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(ds.feature_count)]
                        + [LABEL_COLUMN])
        for row, label in zip(ds.spectra, ds.labels):
            writer.writerow([repr(float(v)) for v in row]
                            + [ds.class_names[label]])


def split(ds: SpectralDataset, ratio: float, seed: int) -> FoldSplit:
    """Seeded hold-out split; |train| = round(ratio * N), half-up.

    Indices are shuffled uniformly before the cut and returned sorted.
    """
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"train ratio must lie in (0, 1), got {ratio}")
    n = ds.n_instances
    if n < 2:
        raise ValueError("need at least 2 instances to split")
    n_train = int(math.floor(ratio * n + 0.5))
    if n_train == 0 or n_train == n:
        raise ValueError(f"ratio {ratio} leaves an empty partition for N={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return FoldSplit(
        train_indices=np.sort(perm[:n_train]),
        test_indices=np.sort(perm[n_train:]),
        train_ratio=ratio,
        seed=seed,
    )


def bootstrap_runs(
    ds: SpectralDataset, ratio: float, n_runs: int, seed: int
) -> list[FoldSplit]:
    """Repeated random hold-out resampling: one derived seed per run."""
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    derived = np.random.SeedSequence(seed).generate_state(n_runs)
    return [split(ds, ratio, int(s)) for s in derived]


def generate_synthetic(spec: SyntheticSpec) -> SpectralDataset:
    """Build a dataset of noisy Gaussian-peak class templates."""
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_count
    x = np.arange(d, dtype=np.float64)
    blocks = []
    for _ in range(spec.n_classes):
        centers = rng.uniform(0.0, d, size=spec.peaks_per_class)
        amplitudes = rng.uniform(0.5, 1.5, size=spec.peaks_per_class)
        template = np.zeros(d)
        for c, a in zip(centers, amplitudes):
            template += a * np.exp(-0.5 * ((x - c) / spec.peak_width) ** 2)
        noise = rng.normal(0.0, spec.noise_sigma,
                           size=(spec.instances_per_class, d))
        blocks.append(template[None, :] + noise)
    spectra = np.vstack(blocks)
    labels = np.repeat(np.arange(spec.n_classes), spec.instances_per_class)
    return SpectralDataset(
        spectra=spectra,
        labels=labels,
        class_names=tuple(f"class{k}" for k in range(spec.n_classes)),
        instance_ids=_default_ids(spectra.shape[0]),
    )


def _default_ids(n: int) -> tuple[str, ...]:
    return tuple(f"i{i:05d}" for i in range(n))


def _is_number(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False
