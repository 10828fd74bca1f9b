"""Datasets, labeled/unlabeled splits and vector-space augmentation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    CsvLabelError,
    CsvMalformedRowError,
    CsvMissingError,
    CsvNonNumericError,
    InvalidInputError,
)

LABEL_COLUMN = "label"


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with optional integer labels.

    ``origin`` maps each row back to its index in the dataset it was cut
    from; it is bookkeeping for metrics and is never used for training.
    """

    features: np.ndarray
    labels: np.ndarray | None
    n_classes: int
    origin: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim != 2:
            raise InvalidInputError(f"features must be 2-D, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("features contain non-finite values")
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.asarray(self.labels, dtype=np.int64)
            if y.shape != (X.shape[0],):
                raise InvalidInputError("need exactly one label per row")
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise InvalidInputError(f"labels must lie in [0, {self.n_classes})")
            object.__setattr__(self, "labels", y)
        origin = np.arange(X.shape[0]) if self.origin is None else np.asarray(self.origin, dtype=np.int64)
        object.__setattr__(self, "origin", origin)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def subset(self, idx, keep_labels: bool = True) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        labels = self.labels[idx] if (keep_labels and self.labels is not None) else None
        return Dataset(self.features[idx], labels, self.n_classes, self.origin[idx])

    def class_counts(self) -> np.ndarray:
        if self.labels is None:
            raise InvalidInputError("dataset has no labels")
        return np.bincount(self.labels, minlength=self.n_classes)


# --------------------------------------------------------------------------
# generators


def make_two_moons(n: int, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Two interleaving unit half circles, centred at (0, 0) and (1, 0.5).

    Class 0 gets ``ceil(n / 2)`` points. Angles are uniform on ``[0, pi]``;
    isotropic Gaussian noise of standard deviation ``noise`` is added.
    """
    if n < 2:
        raise InvalidInputError(f"two moons needs n >= 2, got {n}")
    if noise < 0:
        raise InvalidInputError("noise must be nonnegative")
    rng = np.random.default_rng(seed)
    n0 = (n + 1) // 2
    n1 = n - n0
    t0 = rng.uniform(0.0, math.pi, n0)
    t1 = rng.uniform(0.0, math.pi, n1)
    upper = np.column_stack([np.cos(t0), np.sin(t0)])
    lower = np.column_stack([1.0 - np.cos(t1), 0.5 - np.sin(t1)])
    X = np.vstack([upper, lower])
    y = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    if noise > 0:
        X = X + rng.normal(0.0, noise, X.shape)
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], 2)


def blob_centers(n_classes: int, dim: int, separation: float = 5.0) -> np.ndarray:
    """Deterministic class centres with minimum pairwise distance ``separation``.

    In one dimension the centres sit at ``k * separation``. Otherwise they are
    spaced evenly on a circle in the first two coordinates with radius
    ``separation / (2 sin(pi / K))``, so neighbouring centres are exactly
    ``separation`` apart and no pair is closer.
    """
    centers = np.zeros((n_classes, dim))
    if n_classes == 1:
        return centers
    if dim == 1:
        centers[:, 0] = separation * np.arange(n_classes)
        return centers
    radius = separation / (2.0 * math.sin(math.pi / n_classes))
    angles = 2.0 * math.pi * np.arange(n_classes) / n_classes
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def make_blobs(
    n: int, n_classes: int, dim: int = 2, spread: float = 1.0, seed: int = 0, separation: float = 5.0
) -> Dataset:
    """Isotropic Gaussian clusters around :func:`blob_centers`; class sizes differ by at most one."""
    if n_classes < 1 or n < n_classes or dim < 1:
        raise InvalidInputError(f"invalid blob sizes: n={n}, n_classes={n_classes}, dim={dim}")
    if spread < 0:
        raise InvalidInputError("spread must be nonnegative")
    rng = np.random.default_rng(seed)
    y = np.arange(n) % n_classes
    X = blob_centers(n_classes, dim, separation)[y]
    if spread > 0:
        X = X + rng.normal(0.0, spread, X.shape)
    perm = rng.permutation(n)
    return Dataset(X[perm], y[perm], n_classes)


# --------------------------------------------------------------------------
# CSV


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read a headed CSV; a column named ``label`` holds integer classes.

    Without ``n_classes`` the class count is ``max(label) + 1``. Errors carry
    the 1-based line number of the offending row.
    """
    path = Path(path)
    if not path.is_file():
        raise CsvMissingError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvMalformedRowError("empty file, expected a header", 1) from None
        header = [h.strip() for h in header]
        label_col = header.index(LABEL_COLUMN) if LABEL_COLUMN in header else None
        feat_cols = [k for k in range(len(header)) if k != label_col]
        rows, labels = [], []
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise CsvMalformedRowError(f"expected {len(header)} columns, found {len(row)}", line)
            try:
                rows.append([float(row[k]) for k in feat_cols])
            except ValueError:
                raise CsvNonNumericError(f"non-numeric feature value in {row!r}", line) from None
            if not all(math.isfinite(v) for v in rows[-1]):
                raise CsvNonNumericError("non-finite feature value", line)
            if label_col is not None:
                raw = row[label_col].strip()
                try:
                    lab = int(raw)
                except ValueError:
                    raise CsvLabelError(f"label {raw!r} is not an integer class index", line) from None
                if lab < 0 or (n_classes is not None and lab >= n_classes):
                    raise CsvLabelError(f"label {lab} out of range", line)
                labels.append(lab)
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feat_cols))
    if label_col is None:
        return Dataset(X, None, n_classes or 0)
    y = np.array(labels, dtype=np.int64)
    k = n_classes if n_classes is not None else (int(y.max()) + 1 if y.size else 0)
    return Dataset(X, y, k)


# --------------------------------------------------------------------------
# splitting


@dataclass(frozen=True)
class SplitSpec:
    """``labels_per_class`` is a count, or a fraction of each class when in (0, 1)."""

    labels_per_class: float = 4
    seed: int = 0
    stratified: bool = True

    def count_for(self, population: int) -> int:
        lpc = self.labels_per_class
        if 0 < lpc < 1:
            return max(1, int(round(lpc * population)))
        return int(lpc)


def stratified_indices(labels: np.ndarray, n_classes: int, count_for, rng) -> np.ndarray:
    chosen = []
    for c in range(n_classes):
        members = np.flatnonzero(labels == c)
        k = count_for(members.size)
        if k < 1 or k > members.size:
            raise InvalidInputError(f"class {c} has {members.size} samples, cannot draw {k}")
        chosen.append(rng.choice(members, size=k, replace=False))
    return np.sort(np.concatenate(chosen))


def split_labeled_unlabeled(ds: Dataset, spec: SplitSpec):
    """Stratified labeled sample; the rest becomes unlabeled plus hidden truth.

    Returns ``(labeled, unlabeled, hidden_truth)``. Row ``i`` of ``unlabeled``
    has ground truth ``hidden_truth[i]``; ``origin`` on both parts gives the
    row in ``ds``.
    """
    if not ds.has_labels:
        raise InvalidInputError("cannot split a dataset without labels")
    rng = np.random.default_rng([spec.seed, 0x5EED])
    if spec.stratified:
        lab_idx = stratified_indices(ds.labels, ds.n_classes, spec.count_for, rng)
    else:
        k = spec.count_for(len(ds)) * ds.n_classes if spec.labels_per_class >= 1 else spec.count_for(len(ds))
        if k > len(ds):
            raise InvalidInputError(f"cannot draw {k} labeled samples from {len(ds)}")
        lab_idx = np.sort(rng.choice(len(ds), size=k, replace=False))
    unl_idx = np.setdiff1d(np.arange(len(ds)), lab_idx)
    labeled = ds.subset(lab_idx)
    unlabeled = ds.subset(unl_idx, keep_labels=False)
    return labeled, unlabeled, ds.labels[unl_idx].copy()


def holdout_split(ds: Dataset, fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified ``(rest, held_out)`` split with ``fraction`` of each class held out."""
    if not 0.0 < fraction < 1.0:
        raise InvalidInputError(f"holdout fraction must lie in (0, 1), got {fraction}")
    if not ds.has_labels:
        raise InvalidInputError("holdout split needs labels")
    rng = np.random.default_rng([seed, 0xA1])
    held = stratified_indices(ds.labels, ds.n_classes, lambda n: max(1, int(round(fraction * n))), rng)
    rest = np.setdiff1d(np.arange(len(ds)), held)
    return ds.subset(rest), ds.subset(held)


# --------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentConfig:
    weak_noise_sigma: float = 0.05
    strong_noise_sigma: float = 0.15
    strong_feature_dropout_p: float = 0.1

    def __post_init__(self):
        if self.weak_noise_sigma < 0:
            raise InvalidInputError("weak_noise_sigma must be nonnegative")
        if self.strong_noise_sigma < self.weak_noise_sigma:
            raise InvalidInputError("strong_noise_sigma must be at least weak_noise_sigma")
        if not 0.0 <= self.strong_feature_dropout_p < 1.0:
            raise InvalidInputError("strong_feature_dropout_p must lie in [0, 1)")


def weak_augment(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + cfg.weak_noise_sigma * rng.standard_normal(x.shape)


def strong_augment(x, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Gaussian noise, then each coordinate zeroed independently with probability p."""
    x = np.asarray(x, dtype=np.float64)
    out = x + cfg.strong_noise_sigma * rng.standard_normal(x.shape)
    drop = rng.random(x.shape) < cfg.strong_feature_dropout_p
    out[drop] = 0.0
    return out


def combine(labeled: Dataset, unlabeled: Dataset, selection) -> Dataset:
    """Labeled rows followed by the selected unlabeled rows with their pseudo-labels."""
    idx = np.asarray(selection.indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(unlabeled)):
        raise InvalidInputError("selection index outside the unlabeled pool")
    if idx.size == 0:
        return labeled.subset(np.arange(len(labeled)))
    X = np.vstack([labeled.features, unlabeled.features[idx]])
    y = np.concatenate([labeled.labels, np.asarray(selection.labels, dtype=np.int64)])
    return Dataset(X, y, labeled.n_classes)
