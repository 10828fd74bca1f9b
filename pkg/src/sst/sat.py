"""Self-adaptive thresholding (SAT) and pseudo-label selection.

For each class the predicted probabilities above a cutoff ``C`` are averaged
and scaled by ``S`` to give that class's threshold. A sample is pseudo-labeled
with its argmax class and kept when its confidence strictly exceeds the
threshold of that class.

Class means are computed with an exactly rounded sum (``math.fsum``), so the
result does not depend on the order in which the column is visited. This is
what makes the descending sort a no-op: sorting first gives bitwise the same
thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError

SAT = "SAT"
FIXED = "FIXED"


@dataclass(frozen=True)
class SatConfig:
    cutoff: float = 0.5
    scale: float = 0.8

    def __post_init__(self):
        if not 0.0 < self.cutoff < 1.0:
            raise InvalidInputError(f"cutoff must lie in (0, 1), got {self.cutoff}")
        if not 0.0 < self.scale <= 1.0:
            raise InvalidInputError(f"scale must lie in (0, 1], got {self.scale}")


@dataclass(frozen=True, eq=False)
class ClassThresholds:
    """Per-class thresholds.

    ``fallback[j]`` is set when no probability of class ``j`` exceeded the
    cutoff, in which case ``tau[j]`` is the cutoff itself.
    """

    tau: np.ndarray
    provenance: str = SAT
    fallback: np.ndarray | None = None

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=np.float64)
        if tau.ndim != 1 or tau.size == 0:
            raise InvalidInputError("thresholds must be a nonempty vector")
        if np.any((tau < 0) | (tau > 1)) or not np.all(np.isfinite(tau)):
            raise InvalidInputError("every threshold must lie in [0, 1]")
        fb = np.zeros(tau.shape, dtype=bool) if self.fallback is None else np.asarray(self.fallback, dtype=bool)
        if fb.shape != tau.shape:
            raise InvalidInputError("fallback flags must match the threshold vector")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "fallback", fb)

    @property
    def n_classes(self) -> int:
        return self.tau.shape[0]

    def to_list(self) -> list[float]:
        return [float(t) for t in self.tau]


@dataclass(frozen=True, eq=False)
class PseudoLabelSet:
    """Selected unlabeled samples, ordered by sample index."""

    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    confidences: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return int(np.asarray(self.indices).shape[0])

    def entries(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(y), float(c)) for i, y, c in zip(self.indices, self.labels, self.confidences)]


def as_prob_matrix(P) -> np.ndarray:
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] == 0 or P.shape[1] == 0:
        raise InvalidInputError(f"probability matrix must be a nonempty 2-D array, got shape {P.shape}")
    return P


def pseudo_label(probs) -> tuple[int, float]:
    """Argmax class (lowest index wins ties) and its probability."""
    p = np.asarray(probs, dtype=np.float64)
    label = int(np.argmax(p))
    return label, float(p[label])


def pseudo_labels(P) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`pseudo_label` over the rows of ``P``."""
    P = as_prob_matrix(P)
    labels = np.argmax(P, axis=1)
    return labels, P[np.arange(P.shape[0]), labels]


def compute_thresholds(P, config: SatConfig = SatConfig(), debug: bool = False):
    """Class-specific SAT thresholds for probability matrix ``P``.

    With ``debug=True`` also returns the per-class columns sorted in
    descending order, for inspection only.
    """
    P = as_prob_matrix(P)
    C, S = config.cutoff, config.scale
    n_classes = P.shape[1]
    tau = np.empty(n_classes)
    fallback = np.zeros(n_classes, dtype=bool)
    for j in range(n_classes):
        kept = P[:, j][P[:, j] > C]
        if kept.size == 0:
            tau[j] = C
            fallback[j] = True
        else:
            tau[j] = S * (math.fsum(kept) / kept.size)
    thresholds = ClassThresholds(tau, SAT, fallback)
    if debug:
        return thresholds, [np.sort(P[:, j])[::-1] for j in range(n_classes)]
    return thresholds


def fixed_thresholds(constant: float, n_classes: int) -> ClassThresholds:
    if not 0.0 <= constant <= 1.0:
        raise InvalidInputError(f"fixed threshold must lie in [0, 1], got {constant}")
    if n_classes < 1:
        raise InvalidInputError("n_classes must be positive")
    return ClassThresholds(np.full(n_classes, float(constant)), FIXED)


def select(P, thresholds: ClassThresholds) -> PseudoLabelSet:
    """Samples whose confidence strictly exceeds their class threshold."""
    P = as_prob_matrix(P)
    if thresholds.n_classes != P.shape[1]:
        raise InvalidInputError(f"{thresholds.n_classes} thresholds for {P.shape[1]} classes")
    labels, conf = pseudo_labels(P)
    keep = np.flatnonzero(conf > thresholds.tau[labels])
    return PseudoLabelSet(keep.astype(np.int64), labels[keep].astype(np.int64), conf[keep])


def class_average_threshold(thresholds: ClassThresholds) -> float:
    return float(np.mean(thresholds.tau))
