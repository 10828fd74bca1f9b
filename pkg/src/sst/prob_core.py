"""Softmax, label-smoothed cross-entropy and the SST loss terms.

Label smoothing convention: with smoothing ``eps`` over ``K`` classes the
target distribution is ``q = (1 - eps) * onehot(y) + eps / K``. For
``eps = 0.1`` and ``K = 2`` this gives ``q = [0.95, 0.05]`` for target 0.

Probabilities are clamped to ``PROB_FLOOR`` before taking logs.
"""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from .errors import InvalidInputError

if TYPE_CHECKING:
    from .sat import ClassThresholds, PseudoLabelSet

PROB_FLOOR = 1e-12
_TINY = np.finfo(np.float64).tiny


def softmax(logits) -> np.ndarray:
    """Row-wise softmax of a logit vector or an ``(N, K)`` logit matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim not in (1, 2) or z.shape[-1] < 2:
        raise InvalidInputError(f"softmax needs at least 2 classes, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax input contains non-finite values")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    # floor keeps entries strictly positive when exp underflows
    return np.maximum(e / e.sum(axis=-1, keepdims=True), _TINY)


def smoothed_targets(targets, n_classes: int, smoothing: float = 0.0) -> np.ndarray:
    """Target distributions ``q`` for integer labels, shape ``(N, n_classes)``."""
    if not 0.0 <= smoothing < 1.0:
        raise InvalidInputError(f"smoothing must lie in [0, 1), got {smoothing}")
    t = np.asarray(targets)
    if t.size and (t.min() < 0 or t.max() >= n_classes):
        raise InvalidInputError(f"target index out of range for {n_classes} classes")
    q = np.full((t.shape[0], n_classes), smoothing / n_classes)
    q[np.arange(t.shape[0]), t] += 1.0 - smoothing
    return q


def cross_entropy_rows(probs, targets, smoothing: float = 0.0) -> np.ndarray:
    """Per-sample ``-sum_j q_j log p_j`` for a batch of probability rows."""
    p = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets)).astype(np.int64)
    if p.shape[0] != t.shape[0]:
        raise InvalidInputError(f"{p.shape[0]} probability rows but {t.shape[0]} targets")
    q = smoothed_targets(t, p.shape[1], smoothing)
    return -(q * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=1)


def cross_entropy(probs, target: int, smoothing: float = 0.0) -> float:
    """Cross-entropy of a single probability row against class ``target``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise InvalidInputError("cross_entropy expects a single probability row")
    if not 0 <= int(target) < p.shape[0]:
        raise InvalidInputError(f"target {target} out of range for {p.shape[0]} classes")
    return float(cross_entropy_rows(p[None, :], [int(target)], smoothing)[0])


def labeled_loss(batch_probs, batch_targets, smoothing: float = 0.0) -> float:
    """Mean cross-entropy over a labeled batch."""
    p = np.asarray(batch_probs, dtype=np.float64)
    t = np.asarray(batch_targets)
    if p.ndim != 2 or p.shape[0] == 0:
        raise InvalidInputError("labeled_loss needs a nonempty (N, K) batch")
    if t.shape != (p.shape[0],):
        raise InvalidInputError(f"{p.shape[0]} rows but targets of shape {t.shape}")
    return float(cross_entropy_rows(p, t, smoothing).mean())


def unlabeled_loss(
    probs_strong,
    pseudo_labels: PseudoLabelSet,
    thresholds: ClassThresholds,
    smoothing: float = 0.0,
) -> float:
    """Masked pseudo-label loss on strong-view predictions.

    Each entry of ``pseudo_labels`` contributes its cross-entropy only when its
    confidence strictly exceeds the threshold of its label. The sum is divided
    by the number of rows in ``probs_strong`` (the whole unlabeled batch), not
    by the number of entries that pass.
    """
    p = np.asarray(probs_strong, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise InvalidInputError("unlabeled_loss needs a nonempty (N, K) batch")
    tau = np.asarray(thresholds.tau)
    if tau.shape != (p.shape[1],):
        raise InvalidInputError(f"{tau.shape[0]} thresholds for {p.shape[1]} classes")
    idx = np.asarray(pseudo_labels.indices, dtype=np.int64)
    if idx.size == 0:
        return 0.0
    if idx.min() < 0 or idx.max() >= p.shape[0]:
        raise InvalidInputError("pseudo-label index outside the unlabeled batch")
    labels = np.asarray(pseudo_labels.labels, dtype=np.int64)
    keep = np.asarray(pseudo_labels.confidences) > tau[labels]
    if not keep.any():
        return 0.0
    ce = cross_entropy_rows(p[idx[keep]], labels[keep], smoothing)
    return float(ce.sum() / p.shape[0])


def total_loss(l_labeled: float, l_unlabeled: float, mu: float) -> float:
    if mu < 0:
        raise InvalidInputError(f"mu must be nonnegative, got {mu}")
    return float(l_labeled + mu * l_unlabeled)
