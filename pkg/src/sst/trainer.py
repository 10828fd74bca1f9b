"""Supervised initialisation, Super-SST, Semi-SST and distillation loops.

A run produces one :class:`CycleReport` per model state: report 0 describes
the supervised starting checkpoint and report ``k`` the model after ``k``
self-training cycles. Each report carries the validation accuracy of that
model together with the offline thresholds and selection computed from its
predictions on the unlabeled pool, which are the ones cycle ``k + 1`` trains
on. The selection accuracy is measured against hidden ground truth that the
training code never sees.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import sat as sat_mod
from .data import AugmentConfig, Dataset, combine, strong_augment, weak_augment
from .errors import InvalidInputError, TrainingDivergedError
from .model import (
    AdamW,
    Batch,
    DenseClassifier,
    EmaConfig,
    OptimizerConfig,
    accuracy,
    ema_update,
    grad_step,
    init_classifier,
    predict_proba,
)
from .sat import ClassThresholds, PseudoLabelSet, SatConfig

log = logging.getLogger(__name__)

SUPERVISED_ONLY = "SUPERVISED_ONLY"
SUPER_SST = "SUPER_SST"
SEMI_SST = "SEMI_SST"
MODES = (SUPERVISED_ONLY, SUPER_SST, SEMI_SST)

# rng stream tags
_INIT, _CYCLE, _DISTILL = 1, 2, 3


@dataclass(frozen=True)
class Thresholding:
    """``SAT`` or a fixed constant threshold."""

    kind: str = sat_mod.SAT
    constant: float = 0.0

    def __post_init__(self):
        if self.kind not in (sat_mod.SAT, sat_mod.FIXED):
            raise InvalidInputError(f"thresholding must be SAT or FIXED, got {self.kind!r}")
        if self.kind == sat_mod.FIXED and not 0.0 <= self.constant <= 1.0:
            raise InvalidInputError("fixed threshold must lie in [0, 1]")

    @classmethod
    def fixed(cls, constant: float) -> Thresholding:
        return cls(sat_mod.FIXED, float(constant))

    @property
    def tag(self) -> str:
        return "SAT" if self.kind == sat_mod.SAT else f"FIXED-{self.constant:.2f}"

    def thresholds(self, P: np.ndarray, config: SatConfig) -> ClassThresholds:
        if self.kind == sat_mod.SAT:
            return sat_mod.compute_thresholds(P, config)
        return sat_mod.fixed_thresholds(self.constant, P.shape[1])


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = SUPER_SST
    max_cycles: int = 6
    epochs_per_cycle: int = 30
    init_epochs: int | None = None
    hidden_dims: tuple[int, ...] = (32, 32)
    sat: SatConfig = SatConfig()
    thresholding: Thresholding = Thresholding()
    mu: float = 1.0
    ema: EmaConfig = EmaConfig()
    convergence_epsilon: float = 0.001
    batch_size: int = 64
    unlabeled_batch_size: int = 64
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    smoothing: float = 0.1
    augment: AugmentConfig = AugmentConfig()
    reinit_each_cycle: bool = False
    reset_teacher_each_cycle: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidInputError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_cycles < 1 or self.epochs_per_cycle < 1:
            raise InvalidInputError("max_cycles and epochs_per_cycle must be at least 1")
        if self.init_epochs is not None and self.init_epochs < 1:
            raise InvalidInputError("init_epochs must be at least 1")
        if self.mu < 0:
            raise InvalidInputError("mu must be nonnegative")
        if self.batch_size < 1 or self.unlabeled_batch_size < 1:
            raise InvalidInputError("batch sizes must be positive")
        if not 0.0 <= self.smoothing < 1.0:
            raise InvalidInputError("smoothing must lie in [0, 1)")

    @property
    def n_init_epochs(self) -> int:
        return self.init_epochs if self.init_epochs is not None else self.epochs_per_cycle


@dataclass
class CycleReport:
    cycle: int
    val_accuracy: float
    thresholds: list[float]
    fallback_classes: list[int]
    n_selected: int
    n_unlabeled: int
    selected_fraction: float
    pl_accuracy: float | None
    class_average_threshold: float
    train_loss_first: float | None = None
    train_loss_last: float | None = None
    train_loss_mean: float | None = None
    start_checksum: str = ""
    end_checksum: str = ""


@dataclass
class RunResult:
    model: DenseClassifier
    reports: list[CycleReport]
    teacher: DenseClassifier | None = None
    converged_at: int | None = None
    n_steps: int = 0
    selections: list[PseudoLabelSet] = field(default_factory=list, repr=False)
    probabilities: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def final_accuracy(self) -> float:
        return self.reports[-1].val_accuracy


def has_converged(history, epsilon: float = 0.001) -> bool:
    """True once the latest cycle gained less than ``epsilon`` validation accuracy."""
    accs = [r.val_accuracy if isinstance(r, CycleReport) else float(r) for r in history]
    if len(accs) < 2:
        return False
    return accs[-1] - accs[-2] < epsilon


def _rng(cfg: TrainerConfig, stream: int, cycle: int = 0) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, stream, cycle])


def _layer_dims(cfg: TrainerConfig, ds: Dataset, dims=None) -> tuple[int, ...]:
    if dims is not None:
        return tuple(dims)
    return (ds.dim, *cfg.hidden_dims, ds.n_classes)


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


@dataclass
class _Best:
    acc: float = -1.0
    model: DenseClassifier | None = None
    teacher: DenseClassifier | None = None

    def offer(self, acc: float, model: DenseClassifier, teacher: DenseClassifier | None = None) -> None:
        # ties go to the later epoch
        if acc >= self.acc:
            self.acc = acc
            self.model = model.copy()
            self.teacher = teacher.copy() if teacher is not None else None


def _context(err: Exception, what: str) -> Exception:
    if isinstance(err, TrainingDivergedError):
        return TrainingDivergedError(f"{what}: {err}", err.step)
    return type(err)(f"{what}: {err}")


def train_supervised(
    model: DenseClassifier,
    train: Dataset,
    val: Dataset,
    cfg: TrainerConfig,
    epochs: int,
    rng: np.random.Generator,
) -> tuple[DenseClassifier, list[float]]:
    """Mini-batch training on ``train`` with weak augmentation.

    Validation accuracy is checked after every epoch and the best epoch's
    parameters are returned (ties favour later epochs).
    """
    if len(train) == 0:
        raise InvalidInputError("training set is empty")
    steps = math.ceil(len(train) / cfg.batch_size)
    opt = AdamW(model, cfg.optimizer, epochs, steps)
    best = _Best()
    losses = []
    for _ in range(epochs):
        for idx in _batches(len(train), cfg.batch_size, rng):
            x = weak_augment(train.features[idx], cfg.augment, rng)
            losses.append(grad_step(model, opt, Batch(x, train.labels[idx]), cfg.smoothing))
        best.offer(accuracy(model, val.features, val.labels), model)
    return best.model, losses


def supervised_init(labeled: Dataset, val: Dataset, cfg: TrainerConfig, dims=None) -> DenseClassifier:
    """Train a fresh classifier on the labeled data alone."""
    return _supervised_init(labeled, val, cfg, dims)[0]


def _supervised_init(labeled: Dataset, val: Dataset, cfg: TrainerConfig, dims=None):
    if len(labeled) == 0 or not labeled.has_labels:
        raise InvalidInputError("supervised initialisation needs a nonempty labeled set")
    model = init_classifier(_layer_dims(cfg, labeled, dims), cfg.seed)
    try:
        return train_supervised(model, labeled, val, cfg, cfg.n_init_epochs, _rng(cfg, _INIT))
    except (TrainingDivergedError, InvalidInputError) as err:
        raise _context(err, "supervised initialisation") from err


def _offline(
    model: DenseClassifier,
    unlabeled: Dataset,
    hidden_truth,
    cfg: TrainerConfig,
) -> tuple[np.ndarray, ClassThresholds, PseudoLabelSet, dict]:
    """Predict the pool, derive thresholds, select and score the selection."""
    n_u = len(unlabeled)
    if n_u == 0:
        tau = cfg.thresholding.thresholds(np.full((1, model.n_classes), 1.0 / model.n_classes), cfg.sat)
        return np.zeros((0, model.n_classes)), tau, PseudoLabelSet(), _selection_stats(tau, PseudoLabelSet(), None, 0)
    P = predict_proba(model, unlabeled.features)
    tau = cfg.thresholding.thresholds(P, cfg.sat)
    chosen = sat_mod.select(P, tau)
    return P, tau, chosen, _selection_stats(tau, chosen, hidden_truth, n_u)


def _selection_stats(tau: ClassThresholds, chosen: PseudoLabelSet, hidden_truth, n_u: int) -> dict:
    n_sel = len(chosen)
    pl_acc = None
    if n_sel and hidden_truth is not None:
        pl_acc = float(np.mean(np.asarray(hidden_truth)[chosen.indices] == chosen.labels))
    return dict(
        thresholds=tau.to_list(),
        fallback_classes=[int(j) for j in np.flatnonzero(tau.fallback)],
        n_selected=n_sel,
        n_unlabeled=n_u,
        selected_fraction=n_sel / n_u if n_u else 0.0,
        pl_accuracy=pl_acc,
        class_average_threshold=sat_mod.class_average_threshold(tau),
    )


def _loss_summary(losses: list[float]) -> dict:
    if not losses:
        return {}
    return dict(train_loss_first=losses[0], train_loss_last=losses[-1], train_loss_mean=float(np.mean(losses)))


def _train_semi_cycle(
    student: DenseClassifier,
    teacher: DenseClassifier,
    train: Dataset,
    unlabeled: Dataset,
    tau: ClassThresholds,
    val: Dataset,
    cfg: TrainerConfig,
    rng: np.random.Generator,
):
    """One Semi-SST cycle of student steps with an EMA teacher.

    Per step the teacher labels weak views of an unlabeled batch; labels whose
    confidence beats the cycle's thresholds supervise the student on strong
    views of the same samples. Best epoch is picked by teacher accuracy.
    """
    steps = math.ceil(len(train) / cfg.batch_size)
    opt = AdamW(student, cfg.optimizer, cfg.epochs_per_cycle, steps)
    best = _Best()
    losses = []
    n_u = len(unlabeled)
    u_order = rng.permutation(n_u) if n_u else np.zeros(0, dtype=np.int64)
    u_pos = 0
    for _ in range(cfg.epochs_per_cycle):
        for idx in _batches(len(train), cfg.batch_size, rng):
            x = weak_augment(train.features[idx], cfg.augment, rng)
            batch = Batch(x, train.labels[idx], mu=cfg.mu)
            if n_u:
                take = np.take(u_order, np.arange(u_pos, u_pos + cfg.unlabeled_batch_size), mode="wrap")
                u_pos = (u_pos + cfg.unlabeled_batch_size) % n_u
                xu = unlabeled.features[take]
                xw = weak_augment(xu, cfg.augment, rng)
                xs = strong_augment(xu, cfg.augment, rng)
                y_hat, conf = sat_mod.pseudo_labels(predict_proba(teacher, xw))
                batch.x_unlabeled = xs
                batch.y_unlabeled = y_hat
                batch.mask = (conf > tau.tau[y_hat]).astype(np.float64)
            losses.append(grad_step(student, opt, batch, cfg.smoothing))
            ema_update(teacher, student, cfg.ema)
        best.offer(accuracy(teacher, val.features, val.labels), student, teacher)
    return best.model, best.teacher, losses


def _run_sst(labeled, unlabeled, hidden_truth, val, cfg: TrainerConfig, init_model=None) -> RunResult:
    if init_model is None:
        model, init_losses = _supervised_init(labeled, val, cfg)
        start_sum = init_classifier(_layer_dims(cfg, labeled), cfg.seed).checksum()
    else:
        model, init_losses = init_model.copy(), []
        start_sum = init_model.checksum()
    semi = cfg.mode == SEMI_SST
    teacher = model.copy() if semi else None

    predictor = teacher if semi else model
    P, tau, chosen, stats = _offline(predictor, unlabeled, hidden_truth, cfg)
    reports = [
        CycleReport(
            cycle=0,
            val_accuracy=accuracy(predictor, val.features, val.labels),
            start_checksum=start_sum,
            end_checksum=predictor.checksum(),
            **stats,
            **_loss_summary(init_losses),
        )
    ]
    result = RunResult(model, reports, teacher, n_steps=len(init_losses), selections=[chosen], probabilities=[P])
    if cfg.mode == SUPERVISED_ONLY:
        return result

    for cycle in range(1, cfg.max_cycles + 1):
        rng = _rng(cfg, _CYCLE, cycle)
        train = combine(labeled, unlabeled, chosen)
        if cfg.reinit_each_cycle:
            model = init_classifier(model.layer_dims, cfg.seed)
        start_sum = (teacher if semi else model).checksum()
        try:
            if semi:
                if cfg.reset_teacher_each_cycle:
                    teacher = model.copy()
                model, teacher, losses = _train_semi_cycle(model, teacher, train, unlabeled, tau, val, cfg, rng)
                predictor = teacher
            else:
                model, losses = train_supervised(model, train, val, cfg, cfg.epochs_per_cycle, rng)
                predictor = model
            P, tau, chosen, stats = _offline(predictor, unlabeled, hidden_truth, cfg)
        except (TrainingDivergedError, InvalidInputError) as err:
            raise _context(err, f"cycle {cycle}") from err
        reports.append(
            CycleReport(
                cycle=cycle,
                val_accuracy=accuracy(predictor, val.features, val.labels),
                start_checksum=start_sum,
                end_checksum=predictor.checksum(),
                **stats,
                **_loss_summary(losses),
            )
        )
        result.n_steps += len(losses)
        result.selections.append(chosen)
        result.probabilities.append(P)
        log.debug("cycle %d: val=%.4f selected=%d", cycle, reports[-1].val_accuracy, stats["n_selected"])
        if has_converged(reports, cfg.convergence_epsilon):
            result.converged_at = cycle
            break
    result.model, result.teacher = model, teacher
    return result


def run_super_sst(labeled, unlabeled, hidden_truth, val, cfg: TrainerConfig, init_model=None) -> RunResult:
    """Offline self-training: predict, threshold, select, combine, retrain.

    Each cycle warm-starts from the previous cycle's best checkpoint unless
    ``cfg.reinit_each_cycle`` is set. ``init_model`` lets several runs share
    one supervised starting checkpoint.
    """
    if cfg.mode != SUPER_SST:
        raise InvalidInputError(f"run_super_sst needs mode {SUPER_SST}, got {cfg.mode}")
    return _run_sst(labeled, unlabeled, hidden_truth, val, cfg, init_model)


def run_semi_sst(labeled, unlabeled, hidden_truth, val, cfg: TrainerConfig, init_model=None) -> RunResult:
    """Super-SST's offline cycle plus online pseudo-labels from an EMA teacher.

    The teacher starts as a copy of the initial student and is carried across
    cycles. Thresholds come from the teacher's offline pass at each cycle
    boundary and stay fixed for the cycle's online filtering.
    """
    if cfg.mode != SEMI_SST:
        raise InvalidInputError(f"run_semi_sst needs mode {SEMI_SST}, got {cfg.mode}")
    return _run_sst(labeled, unlabeled, hidden_truth, val, cfg, init_model)


def run(labeled, unlabeled, hidden_truth, val, cfg: TrainerConfig, init_model=None) -> RunResult:
    """Dispatch on ``cfg.mode``; ``SUPERVISED_ONLY`` yields only report 0."""
    return _run_sst(labeled, unlabeled, hidden_truth, val, cfg, init_model)


def distill(
    teacher_run: RunResult,
    student_dims,
    labeled: Dataset,
    unlabeled: Dataset,
    val: Dataset,
    cfg: TrainerConfig,
    hidden_truth=None,
) -> RunResult:
    """Train a fresh student on labeled data plus the teacher's SAT selection.

    The teacher (EMA teacher when present) predicts the pool once; the
    student never sees teacher probabilities, only the selected hard labels.
    """
    teacher = teacher_run.teacher if teacher_run.teacher is not None else teacher_run.model
    if teacher is None:
        raise InvalidInputError("teacher run holds no trained model")
    P, tau, chosen, stats = _offline(teacher, unlabeled, hidden_truth, cfg)
    train = combine(labeled, unlabeled, chosen)
    student_cfg = replace(cfg, mode=SUPERVISED_ONLY)
    dims = _layer_dims(cfg, labeled, student_dims)
    student, losses = _supervised_init(train, val, student_cfg, dims)
    report = CycleReport(
        cycle=1,
        val_accuracy=accuracy(student, val.features, val.labels),
        start_checksum=init_classifier(dims, cfg.seed).checksum(),
        end_checksum=student.checksum(),
        **stats,
        **_loss_summary(losses),
    )
    return RunResult(student, [report], n_steps=len(losses), selections=[chosen], probabilities=[P])
