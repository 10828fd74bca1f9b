"""Replicate runner: builds data for a seed, trains, and flattens reports into metrics records."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, SplitSpec, holdout_split, load_csv, make_blobs, make_two_moons, split_labeled_unlabeled
from .model import DenseClassifier, save_checkpoint
from .trainer import SUPERVISED_ONLY, RunResult, TrainerConfig, run, supervised_init


@dataclass(frozen=True)
class ReplicateData:
    labeled: Dataset
    unlabeled: Dataset
    hidden_truth: np.ndarray
    val: Dataset


def build_dataset(exp: ExperimentConfig, seed: int) -> Dataset:
    spec = exp.dataset
    if spec.csv is not None:
        return load_csv(spec.csv, spec.n_classes)
    data_seed = spec.seed if spec.seed is not None else seed
    if spec.generator == "two_moons":
        return make_two_moons(spec.params["n"], spec.params["noise"], data_seed)
    p = spec.params
    return make_blobs(p["n"], p["n_classes"], p["dim"], p["spread"], data_seed, p["separation"])


def prepare(exp: ExperimentConfig, seed: int) -> ReplicateData:
    ds = build_dataset(exp, seed)
    rest, val = holdout_split(ds, exp.split.val_fraction, seed)
    labeled, unlabeled, truth = split_labeled_unlabeled(
        rest, SplitSpec(exp.split.labels_per_class, seed, exp.split.stratified)
    )
    return ReplicateData(labeled, unlabeled, truth, val)


def run_id(cfg: TrainerConfig) -> str:
    return f"{cfg.mode.lower()}:{cfg.thresholding.tag}:C={cfg.sat.cutoff:g}:S={cfg.sat.scale:g}:seed={cfg.seed:04d}"


def to_records(cfg: TrainerConfig, result: RunResult) -> list[dict]:
    rid = run_id(cfg)
    out = []
    for rep in result.reports:
        rec = {
            "run_id": rid,
            "mode": cfg.mode,
            "thresholding": cfg.thresholding.tag,
            "seed": cfg.seed,
            "cutoff": cfg.sat.cutoff,
            "scale": cfg.sat.scale,
            "mu": cfg.mu,
            "converged": result.converged_at == rep.cycle,
            **asdict(rep),
        }
        out.append(rec)
    return out


def dump_records(records: list[dict]) -> str:
    records = sorted(records, key=lambda r: (r["run_id"], r["cycle"]))
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-._=" else "_" for c in name)


@dataclass(frozen=True)
class Job:
    """One replicate seed and the trainer variants that share its starting checkpoint."""

    exp: ExperimentConfig
    seed: int
    variants: tuple[TrainerConfig, ...]
    checkpoint_dir: str | None = None


@dataclass
class JobResult:
    seed: int
    init_accuracy: float
    records: list[dict]
    summaries: list[dict]


def run_job(job: Job) -> JobResult:
    data = prepare(job.exp, job.seed)
    base = replace(job.exp.trainer, seed=job.seed)
    init = supervised_init(data.labeled, data.val, base)
    init_acc = None
    records, summaries = [], []
    ckdir = Path(job.checkpoint_dir) if job.checkpoint_dir else None
    if ckdir is not None and any(v.mode != SUPERVISED_ONLY for v in job.variants):
        save_checkpoint(ckdir / f"init-seed={job.seed:04d}.npz", init)
    for variant in job.variants:
        cfg = replace(variant, seed=job.seed)
        result = run(data.labeled, data.unlabeled, data.hidden_truth, data.val, cfg, init_model=init)
        init_acc = result.reports[0].val_accuracy
        records += to_records(cfg, result)
        summaries.append(
            dict(
                run_id=run_id(cfg),
                mode=cfg.mode,
                seed=job.seed,
                best_val_accuracy=max(r.val_accuracy for r in result.reports),
                final_val_accuracy=result.final_accuracy,
                cycles=len(result.reports) - 1,
            )
        )
        if ckdir is not None:
            save_checkpoint(ckdir / f"{_safe(run_id(cfg))}.npz", _final(result), result.n_steps)
    return JobResult(job.seed, init_acc, records, summaries)


def _final(result: RunResult) -> DenseClassifier:
    return result.teacher if result.teacher is not None else result.model


def run_jobs(jobs: list[Job], n_jobs: int = 1) -> list[JobResult]:
    """Execute jobs, possibly in worker processes; output order follows ``jobs``."""
    if n_jobs <= 1 or len(jobs) <= 1:
        return [run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(run_job, jobs))
