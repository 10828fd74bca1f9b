"""JSON experiment configuration: parsing, validation and serialisation.

Every parse error is a :class:`ConfigError` naming the dotted field path.
``to_dict`` emits a document that ``from_dict`` reads back to an equal config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .data import AugmentConfig
from .errors import ConfigError, InvalidInputError
from .model import EmaConfig, OptimizerConfig
from .sat import FIXED, SatConfig
from .trainer import TrainerConfig, Thresholding

CONFIG_VERSION = 1
GENERATORS = ("two_moons", "blobs")


@dataclass(frozen=True)
class DatasetSpec:
    """A synthetic generator with parameters, or a CSV path.

    ``seed`` pins the generated data; when ``None`` each replicate seed
    generates its own sample.
    """

    generator: str | None = "two_moons"
    params: dict = field(default_factory=lambda: {"n": 600, "noise": 0.15})
    csv: str | None = None
    n_classes: int | None = None
    seed: int | None = None

    def to_dict(self) -> dict:
        if self.csv is not None:
            out = {"csv": self.csv}
            if self.n_classes is not None:
                out["n_classes"] = self.n_classes
        else:
            out = {"generator": self.generator, **self.params}
        if self.seed is not None:
            out["seed"] = self.seed
        return out


@dataclass(frozen=True)
class SplitConfig:
    labels_per_class: float = 4
    val_fraction: float = 0.2
    stratified: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSpec = DatasetSpec()
    split: SplitConfig = SplitConfig()
    trainer: TrainerConfig = TrainerConfig()
    seeds: tuple[int, ...] = (0,)
    output_dir: str = "runs"
    version: int = CONFIG_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "dataset": self.dataset.to_dict(),
            "split": {f.name: getattr(self.split, f.name) for f in fields(SplitConfig)},
            "trainer": trainer_to_dict(self.trainer),
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# helpers


def _take(d: dict, allowed: set[str], where: str) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(where, "expected an object")
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}.{extra[0]}" if where else extra[0], "unknown key")
    return d


def _num(d: dict, key: str, where: str, default, kind=float):
    if key not in d:
        return default
    v = d[key]
    if v is None and default is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}", f"expected a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigError(f"{where}.{key}", f"expected an integer, got {v!r}")
        return int(v)
    return float(v)


def _bool(d: dict, key: str, where: str, default: bool) -> bool:
    v = d.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{where}.{key}", f"expected true or false, got {v!r}")
    return v


def _build(cls, where: str, **kwargs):
    try:
        return cls(**kwargs)
    except InvalidInputError as err:
        raise ConfigError(where, str(err)) from None


# --------------------------------------------------------------------------
# sections


def parse_dataset(d) -> DatasetSpec:
    where = "dataset"
    if not isinstance(d, dict):
        raise ConfigError(where, "expected an object")
    seed = _num(d, "seed", where, None, int)
    if "csv" in d:
        _take(d, {"csv", "n_classes", "seed"}, where)
        if not isinstance(d["csv"], str):
            raise ConfigError("dataset.csv", "expected a path string")
        return DatasetSpec(None, {}, d["csv"], _num(d, "n_classes", where, None, int), seed)
    gen = d.get("generator")
    if gen == "two_moons":
        _take(d, {"generator", "n", "noise", "seed"}, where)
        params = {"n": _num(d, "n", where, 600, int), "noise": _num(d, "noise", where, 0.15)}
        if params["n"] < 2:
            raise ConfigError("dataset.n", "two_moons needs n >= 2")
    elif gen == "blobs":
        _take(d, {"generator", "n", "n_classes", "dim", "spread", "separation", "seed"}, where)
        params = {
            "n": _num(d, "n", where, 300, int),
            "n_classes": _num(d, "n_classes", where, 3, int),
            "dim": _num(d, "dim", where, 2, int),
            "spread": _num(d, "spread", where, 1.0),
            "separation": _num(d, "separation", where, 5.0),
        }
        if params["n_classes"] < 1 or params["n"] < params["n_classes"] or params["dim"] < 1:
            raise ConfigError("dataset", "blobs needs n >= n_classes >= 1 and dim >= 1")
    else:
        raise ConfigError("dataset.generator", f"expected one of {GENERATORS} or a csv path, got {gen!r}")
    return DatasetSpec(gen, params, None, None, seed)


def parse_split(d) -> SplitConfig:
    where = "split"
    _take(d, {"labels_per_class", "val_fraction", "stratified"}, where)
    lpc = _num(d, "labels_per_class", where, 4)
    if lpc <= 0 or (lpc >= 1 and lpc != int(lpc)):
        raise ConfigError("split.labels_per_class", "expected a positive count or a fraction in (0, 1)")
    val = _num(d, "val_fraction", where, 0.2)
    if not 0.0 < val < 1.0:
        raise ConfigError("split.val_fraction", "expected a fraction in (0, 1)")
    return SplitConfig(int(lpc) if lpc >= 1 else lpc, val, _bool(d, "stratified", where, True))


def parse_thresholding(v) -> Thresholding:
    if v == "SAT":
        return Thresholding()
    if isinstance(v, dict) and set(v) == {"fixed"}:
        c = _num(v, "fixed", "trainer.thresholding", 0.0)
        return _build(Thresholding, "trainer.thresholding.fixed", kind=FIXED, constant=c)
    raise ConfigError("trainer.thresholding", f'expected "SAT" or {{"fixed": c}}, got {v!r}')


_TRAINER_KEYS = {
    "mode", "max_cycles", "epochs_per_cycle", "init_epochs", "hidden_dims", "cutoff", "scale",
    "thresholding", "mu", "ema_momentum", "convergence_epsilon", "batch_size", "unlabeled_batch_size",
    "optimizer", "smoothing", "augment", "reinit_each_cycle", "reset_teacher_each_cycle",
}  # fmt: skip


def parse_trainer(d) -> TrainerConfig:
    where = "trainer"
    _take(d, _TRAINER_KEYS, where)
    dflt = TrainerConfig()
    hidden = d.get("hidden_dims", list(dflt.hidden_dims))
    if not isinstance(hidden, list) or not all(isinstance(h, int) and not isinstance(h, bool) and h > 0 for h in hidden):
        raise ConfigError("trainer.hidden_dims", "expected a list of positive integers")
    sat = _build(
        SatConfig, "trainer.cutoff",
        cutoff=_num(d, "cutoff", where, dflt.sat.cutoff), scale=_num(d, "scale", where, dflt.sat.scale),
    )  # fmt: skip
    opt_d = _take(d.get("optimizer", {}), {f.name for f in fields(OptimizerConfig)}, "trainer.optimizer")
    opt = _build(
        OptimizerConfig, "trainer.optimizer",
        **{f.name: _num(opt_d, f.name, "trainer.optimizer", getattr(dflt.optimizer, f.name)) for f in fields(OptimizerConfig)},
    )  # fmt: skip
    aug_d = _take(d.get("augment", {}), {f.name for f in fields(AugmentConfig)}, "trainer.augment")
    aug = _build(
        AugmentConfig, "trainer.augment",
        **{f.name: _num(aug_d, f.name, "trainer.augment", getattr(dflt.augment, f.name)) for f in fields(AugmentConfig)},
    )  # fmt: skip
    mode = d.get("mode", dflt.mode)
    if not isinstance(mode, str):
        raise ConfigError("trainer.mode", "expected a string")
    try:
        return _trainer(d, mode, hidden, sat, opt, aug, dflt)
    except ConfigError as err:
        # TrainerConfig messages start with the offending field name
        head = str(err).split(": ", 1)[1].split()[0]
        if err.field == where and head in _TRAINER_KEYS:
            raise ConfigError(f"{where}.{head}", str(err).split(": ", 1)[1]) from None
        raise


def _trainer(d, mode, hidden, sat, opt, aug, dflt) -> TrainerConfig:
    where = "trainer"
    return _build(
        TrainerConfig, where,
        mode=mode,
        max_cycles=_num(d, "max_cycles", where, dflt.max_cycles, int),
        epochs_per_cycle=_num(d, "epochs_per_cycle", where, dflt.epochs_per_cycle, int),
        init_epochs=_num(d, "init_epochs", where, dflt.init_epochs, int),
        hidden_dims=tuple(hidden),
        sat=sat,
        thresholding=parse_thresholding(d.get("thresholding", "SAT")),
        mu=_num(d, "mu", where, dflt.mu),
        ema=_build(EmaConfig, "trainer.ema_momentum", momentum=_num(d, "ema_momentum", where, dflt.ema.momentum)),
        convergence_epsilon=_num(d, "convergence_epsilon", where, dflt.convergence_epsilon),
        batch_size=_num(d, "batch_size", where, dflt.batch_size, int),
        unlabeled_batch_size=_num(d, "unlabeled_batch_size", where, dflt.unlabeled_batch_size, int),
        optimizer=opt,
        smoothing=_num(d, "smoothing", where, dflt.smoothing),
        augment=aug,
        reinit_each_cycle=_bool(d, "reinit_each_cycle", where, dflt.reinit_each_cycle),
        reset_teacher_each_cycle=_bool(d, "reset_teacher_each_cycle", where, dflt.reset_teacher_each_cycle),
    )  # fmt: skip


def trainer_to_dict(t: TrainerConfig) -> dict:
    return {
        "mode": t.mode,
        "max_cycles": t.max_cycles,
        "epochs_per_cycle": t.epochs_per_cycle,
        "init_epochs": t.init_epochs,
        "hidden_dims": list(t.hidden_dims),
        "cutoff": t.sat.cutoff,
        "scale": t.sat.scale,
        "thresholding": "SAT" if t.thresholding.kind != FIXED else {"fixed": t.thresholding.constant},
        "mu": t.mu,
        "ema_momentum": t.ema.momentum,
        "convergence_epsilon": t.convergence_epsilon,
        "batch_size": t.batch_size,
        "unlabeled_batch_size": t.unlabeled_batch_size,
        "optimizer": {f.name: getattr(t.optimizer, f.name) for f in fields(OptimizerConfig)},
        "smoothing": t.smoothing,
        "augment": {f.name: getattr(t.augment, f.name) for f in fields(AugmentConfig)},
        "reinit_each_cycle": t.reinit_each_cycle,
        "reset_teacher_each_cycle": t.reset_teacher_each_cycle,
    }


def from_dict(d) -> ExperimentConfig:
    _take(d, {"version", "dataset", "split", "trainer", "seeds", "output_dir"}, "")
    version = d.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError("version", f"expected {CONFIG_VERSION}, got {version!r}")
    seeds = d.get("seeds", [0])
    if (
        not isinstance(seeds, list)
        or not seeds
        or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)
    ):
        raise ConfigError("seeds", "expected a nonempty list of nonnegative integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seed")
    out = d.get("output_dir", "runs")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir", "expected a nonempty path string")
    return ExperimentConfig(
        dataset=parse_dataset(d.get("dataset", {"generator": "two_moons"})),
        split=parse_split(d.get("split", {})),
        trainer=parse_trainer(d.get("trainer", {})),
        seeds=tuple(seeds),
        output_dir=out,
        version=version,
    )


def loads(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("<document>", f"invalid JSON: {err}") from None
    return from_dict(d)


def load(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<path>", f"no such config file: {path}")
    return loads(path.read_text(encoding="utf-8"))
