"""Feed-forward ReLU classifier trained with hand-written backprop.

The network stands in for the student/teacher pair of SST; the thresholding
and self-training logic never look inside it. Parameters are stored as a list
of ``(W, b)`` pairs with ``W`` of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, TrainingDivergedError
from .prob_core import PROB_FLOOR, smoothed_targets, softmax

CHECKPOINT_FORMAT = "sst-dense-classifier/1"


@dataclass(eq=False)
class DenseClassifier:
    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        """All parameter arrays in layer order: W0, b0, W1, b1, ..."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> DenseClassifier:
        return DenseClassifier(
            tuple(self.layer_dims),
            [W.copy() for W in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )

    def load_state(self, other: DenseClassifier) -> None:
        """Overwrite parameters in place with those of ``other``."""
        check_same_architecture(self, other)
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def checksum(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def forward(self, x) -> np.ndarray:
        return self._forward(x)[0]

    def _forward(self, x):
        a = np.asarray(x, dtype=np.float64)
        single = a.ndim == 1
        if single:
            a = a[None, :]
        if a.ndim != 2 or a.shape[1] != self.input_dim:
            raise InvalidInputError(f"expected features of width {self.input_dim}, got shape {np.shape(x)}")
        acts = [a]
        # overflow surfaces as non-finite logits, which training checks explicitly
        with np.errstate(over="ignore", invalid="ignore"):
            for k, (W, b) in enumerate(zip(self.weights, self.biases)):
                z = a @ W + b
                a = np.maximum(z, 0.0) if k < self.n_layers - 1 else z
                acts.append(a)
        out = acts[-1][0] if single else acts[-1]
        return out, acts

    def backward(self, acts: list[np.ndarray], dlogits: np.ndarray) -> list[np.ndarray]:
        """Gradients of a scalar loss w.r.t. parameters given ``dL/dlogits``."""
        grads: list[np.ndarray] = [None] * (2 * self.n_layers)  # type: ignore[list-item]
        delta = dlogits
        for k in range(self.n_layers - 1, -1, -1):
            grads[2 * k] = acts[k].T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.weights[k].T) * (acts[k] > 0)
        return grads


def check_same_architecture(a: DenseClassifier, b: DenseClassifier) -> None:
    if tuple(a.layer_dims) != tuple(b.layer_dims):
        raise InvalidInputError(f"architecture mismatch: {a.layer_dims} vs {b.layer_dims}")


def init_classifier(layer_dims, seed: int = 0) -> DenseClassifier:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation, deterministic in ``seed``."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise InvalidInputError(f"layer_dims needs at least two positive sizes, got {layer_dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return DenseClassifier(dims, weights, biases, int(seed))


def predict_proba(model: DenseClassifier, features) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError("predict_proba expects a 2-D feature batch")
    return softmax(model.forward(X))


def accuracy(model: DenseClassifier, features, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    pred = np.argmax(model.forward(np.asarray(features, dtype=np.float64)), axis=1)
    return float(np.mean(pred == labels))


# --------------------------------------------------------------------------
# losses and gradients


@dataclass
class Batch:
    """One optimisation step's worth of data.

    ``x`` / ``y`` are the labeled part. The optional unlabeled part holds the
    strong views ``x_unlabeled`` with teacher pseudo-labels and a 0/1 ``mask``;
    its loss is averaged over every unlabeled row and weighted by ``mu``.
    """

    x: np.ndarray
    y: np.ndarray
    x_unlabeled: np.ndarray | None = None
    y_unlabeled: np.ndarray | None = None
    mask: np.ndarray | None = None
    mu: float = 0.0


def loss_and_grads(model: DenseClassifier, batch: Batch, smoothing: float = 0.0):
    """Total loss ``L_l + mu * L_u`` and its parameter gradients.

    Returns ``(total, labeled, unlabeled, grads)``.
    """
    x = np.asarray(batch.x, dtype=np.float64)
    y = np.asarray(batch.y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] == 0 or y.shape != (x.shape[0],):
        raise InvalidInputError("batch needs a nonempty labeled part with one target per row")
    n_l = x.shape[0]
    targets = [y]
    weights = [np.full(n_l, 1.0 / n_l)]
    parts = [x]
    has_u = batch.x_unlabeled is not None and len(batch.x_unlabeled) > 0
    if has_u:
        xu = np.asarray(batch.x_unlabeled, dtype=np.float64)
        n_u = xu.shape[0]
        mask = np.ones(n_u) if batch.mask is None else np.asarray(batch.mask, dtype=np.float64)
        if batch.y_unlabeled is None or len(batch.y_unlabeled) != n_u or mask.shape != (n_u,):
            raise InvalidInputError("unlabeled part needs one pseudo-label and one mask value per row")
        parts.append(xu)
        targets.append(np.asarray(batch.y_unlabeled, dtype=np.int64))
        weights.append(batch.mu * mask / n_u)
    X = np.concatenate(parts) if has_u else x
    T = np.concatenate(targets) if has_u else y
    w = np.concatenate(weights) if has_u else weights[0]

    logits, acts = model._forward(X)
    if not np.all(np.isfinite(logits)):
        raise TrainingDivergedError("non-finite logits")
    p = softmax(logits)
    q = smoothed_targets(T, model.n_classes, smoothing)
    ce = -(q * np.log(np.maximum(p, PROB_FLOOR))).sum(axis=1)
    l_lab = float(ce[:n_l].mean())
    l_unl = float((mask * ce[n_l:]).sum() / n_u) if has_u else 0.0
    total = l_lab + batch.mu * l_unl if has_u else l_lab
    grads = model.backward(acts, w[:, None] * (p - q))
    return total, l_lab, l_unl, grads


# --------------------------------------------------------------------------
# optimiser


def warmup_cosine_lr(epoch: float, base_lr: float, warmup_epochs: float, total_epochs: float) -> float:
    """Linear warmup from 0 followed by cosine decay to 0 at ``total_epochs``.

    ``epoch`` may be fractional.
    """
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    span = total_epochs - warmup_epochs
    if span <= 0:
        return base_lr
    progress = min(max((epoch - warmup_epochs) / span, 0.0), 1.0)
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * progress))


def scaled_warmup(warmup_epochs: float, total_epochs: int, reference_epochs: int = 20) -> float:
    """Shrink the warmup proportionally for runs shorter than ``reference_epochs``."""
    if total_epochs < reference_epochs:
        return warmup_epochs * total_epochs / reference_epochs
    return float(warmup_epochs)


@dataclass
class OptimizerConfig:
    base_lr: float = 1e-2
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_epochs: float = 5.0

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidInputError("beta1 and beta2 must lie in [0, 1)")
        if self.base_lr < 0 or self.weight_decay < 0:
            raise InvalidInputError("base_lr and weight_decay must be nonnegative")


@dataclass
class AdamW:
    """Adam with decoupled weight decay on a per-epoch warmup/cosine schedule.

    Weight decay applies to weight matrices only, not biases. The schedule is
    evaluated at the fractional epoch ``step / steps_per_epoch``.
    """

    model: DenseClassifier
    config: OptimizerConfig
    total_epochs: int
    steps_per_epoch: int
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.total_epochs < 1 or self.steps_per_epoch < 1:
            raise InvalidInputError("total_epochs and steps_per_epoch must be positive")
        self.warmup = scaled_warmup(self.config.warmup_epochs, self.total_epochs)
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.model.parameters()]
            self.v = [np.zeros_like(p) for p in self.model.parameters()]

    def lr_at(self, step: int) -> float:
        return warmup_cosine_lr(step / self.steps_per_epoch, self.config.base_lr, self.warmup, self.total_epochs)

    def apply(self, grads: list[np.ndarray]) -> None:
        c = self.config
        lr = self.lr_at(self.step)
        t = self.step + 1
        bc1 = 1.0 - c.beta1**t
        bc2 = 1.0 - c.beta2**t
        for k, (p, g) in enumerate(zip(self.model.parameters(), grads)):
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
            if k % 2 == 0 and c.weight_decay:
                update = update + c.weight_decay * p
            p -= lr * update
        self.step += 1


def grad_step(model: DenseClassifier, optimizer: AdamW, batch: Batch, smoothing: float = 0.0) -> float:
    """One AdamW update on the total loss; returns the pre-update loss."""
    try:
        total, _, _, grads = loss_and_grads(model, batch, smoothing)
    except TrainingDivergedError as err:
        raise TrainingDivergedError(f"{err} at step {optimizer.step}", optimizer.step) from None
    if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingDivergedError(f"non-finite loss or gradient at step {optimizer.step}", optimizer.step)
    optimizer.apply(grads)
    if not all(np.all(np.isfinite(p)) for p in model.parameters()):
        raise TrainingDivergedError(f"non-finite parameters after step {optimizer.step - 1}", optimizer.step - 1)
    return total


# --------------------------------------------------------------------------
# EMA teacher


@dataclass(frozen=True)
class EmaConfig:
    momentum: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidInputError(f"EMA momentum must lie in [0, 1), got {self.momentum}")


def ema_update(teacher: DenseClassifier, student: DenseClassifier, cfg: EmaConfig | float) -> DenseClassifier:
    """In place ``teacher := m * teacher + (1 - m) * student``.

    Written as ``teacher + (1 - m) * (student - teacher)`` and clipped to the
    interval spanned by the two values, so identical parameters stay bitwise
    identical and rounding never leaves the convex hull.
    """
    m = cfg.momentum if isinstance(cfg, EmaConfig) else float(cfg)
    if not 0.0 <= m < 1.0:
        raise InvalidInputError(f"EMA momentum must lie in [0, 1), got {m}")
    check_same_architecture(teacher, student)
    for t, s in zip(teacher.parameters(), student.parameters()):
        if m == 0.0:
            t[...] = s
            continue
        new = t + (1.0 - m) * (s - t)
        np.clip(new, np.minimum(t, s), np.maximum(t, s), out=new)
        t[...] = new
    return teacher


# --------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: DenseClassifier, step: int = 0) -> Path:
    """Write an ``.npz`` holding dims, seed, step and every parameter in layer order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"param_{k:03d}": p for k, p in enumerate(model.parameters())}
    with open(path, "wb") as fh:
        np.savez(
            fh,
            format=np.array(CHECKPOINT_FORMAT),
            layer_dims=np.array(model.layer_dims, dtype=np.int64),
            seed=np.array(model.seed, dtype=np.int64),
            step=np.array(step, dtype=np.int64),
            **arrays,
        )
    return path


def load_checkpoint(path) -> tuple[DenseClassifier, int]:
    with np.load(Path(path), allow_pickle=False) as z:
        if str(z["format"]) != CHECKPOINT_FORMAT:
            raise InvalidInputError(f"{path}: not a classifier checkpoint")
        dims = tuple(int(d) for d in z["layer_dims"])
        params = [z[f"param_{k:03d}"] for k in range(2 * (len(dims) - 1))]
        model = DenseClassifier(dims, params[0::2], params[1::2], int(z["seed"]))
        return model, int(z["step"])
