"""``sst`` command line: run, ablate, compare-thresholding and report.

Every command writes ``metrics.jsonl`` (one JSON record per cycle, sorted by
run id and cycle) and a ``checkpoints/`` directory under the output
directory. Failures print one line ``sst-error: <kind>: <message>`` to
stderr and exit nonzero: 2 for config, data and log problems, 1 for
training failures.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from .errors import ConfigError, CsvError, InvalidInputError, TrainingDivergedError
from .experiment import Job, dump_records, run_jobs
from .sat import SatConfig
from .trainer import Thresholding

EXIT_OK, EXIT_TRAINING, EXIT_INPUT = 0, 1, 2
METRICS_FILE = "metrics.jsonl"

REPORT_FIELDS = ("val_accuracy", "class_average_threshold", "selected_fraction", "pl_accuracy")
# fields every metrics record must carry for ``report`` to aggregate it
REQUIRED_FIELDS = ("run_id", "mode", "thresholding", "seed", "cutoff", "scale", "cycle", *REPORT_FIELDS)


class LogError(InvalidInputError):
    pass


# --------------------------------------------------------------------------
# shared plumbing


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _execute(exp, variants, out_dir, n_jobs: int):
    out = Path(out_dir if out_dir is not None else exp.output_dir)
    ckpt = out / "checkpoints"
    ckpt.mkdir(parents=True, exist_ok=True)
    jobs = [Job(exp, seed, tuple(variants), str(ckpt)) for seed in exp.seeds]
    results = run_jobs(jobs, n_jobs)
    records = [r for res in results for r in res.records]
    (out / METRICS_FILE).write_text(dump_records(records))
    return out, results, records


def _mean_std(values):
    vals = [float(v) for v in values if v is not None]
    if not vals:
        return None, None, 0
    m = math.fsum(vals) / len(vals)
    var = math.fsum((v - m) ** 2 for v in vals) / len(vals)
    return m, math.sqrt(var), len(vals)


def _fmt(value, digits: int = 4) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [max(len(h), *(len(r[k]) for r in rows)) if rows else len(h) for k, h in enumerate(header)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines)


def _by_cycle(records, key_fn):
    """``{group key: {cycle: [records]}}``."""
    groups: dict = defaultdict(lambda: defaultdict(list))
    for r in records:
        groups[key_fn(r)][r["cycle"]].append(r)
    return groups


def _print_summaries(results) -> None:
    for res in results:
        for s in res.summaries:
            print(
                f"summary run_id={s['run_id']} mode={s['mode']} seed={s['seed']} "
                f"best_val_accuracy={s['best_val_accuracy']:.4f} cycles={s['cycles']}"
            )


# --------------------------------------------------------------------------
# commands


def cmd_run(config_path, out_dir=None, n_jobs: int = 1) -> int:
    exp = config_mod.load(config_path)
    out, results, _ = _execute(exp, [exp.trainer], out_dir, n_jobs)
    _print_summaries(results)
    print(f"wrote {out / METRICS_FILE}")
    return EXIT_OK


def grid_variants(base, cutoffs, scales):
    for c in cutoffs:
        for s in scales:
            yield replace(base, sat=SatConfig(c, s), thresholding=Thresholding())


def cmd_ablate(config_path, cutoffs, scales, out_dir=None, n_jobs: int = 1) -> int:
    exp = config_mod.load(config_path)
    try:
        variants = list(grid_variants(exp.trainer, cutoffs, scales))
    except InvalidInputError as err:
        raise ConfigError("grid", str(err)) from None
    out, results, records = _execute(exp, variants, out_dir, n_jobs)
    _print_summaries(results)
    print("grid_summary")
    print(grid_table(records))
    print(f"wrote {out / METRICS_FILE}")
    return EXIT_OK


def grid_table(records) -> str:
    """Mean val accuracy over seeds for every (C, S) grid point and cycle."""
    groups = _by_cycle(records, lambda r: (r["cutoff"], r["scale"]))
    n_cycles = max((max(g) for g in groups.values()), default=0) + 1
    header = ["C", "S", "seeds"] + [f"cycle{k}" for k in range(n_cycles)] + ["final"]
    rows = []
    for (c, s), per_cycle in sorted(groups.items()):
        finals = _finals(per_cycle)
        row = [f"{c:g}", f"{s:g}", str(len(per_cycle[0]))]
        row += [_fmt(_mean_std(r["val_accuracy"] for r in per_cycle.get(k, []))[0]) for k in range(n_cycles)]
        row.append(_fmt(_mean_std(finals)[0]))
        rows.append(row)
    return _table(header, rows)


def _finals(per_cycle) -> list[float]:
    """Final val accuracy of each run in a group (runs may stop at different cycles)."""
    last: dict = {}
    for k in sorted(per_cycle):
        for r in per_cycle[k]:
            last[r["run_id"]] = r["val_accuracy"]
    return list(last.values())


def cmd_compare_thresholding(config_path, constants, out_dir=None, n_jobs: int = 1) -> int:
    exp = config_mod.load(config_path)
    if any(not 0.0 <= c <= 1.0 for c in constants):
        raise ConfigError("constants", "fixed thresholds must lie in [0, 1]")
    sat_variant = replace(exp.trainer, thresholding=Thresholding())
    variants = [sat_variant] + [replace(exp.trainer, thresholding=Thresholding.fixed(c)) for c in constants]
    out, results, records = _execute(exp, variants, out_dir, n_jobs)
    _print_summaries(results)
    print(compare_table(records))
    print(f"wrote {out / METRICS_FILE}")
    return EXIT_OK


def compare_table(records) -> str:
    """Per-strategy, per-cycle means over seeds of the four comparison quantities."""
    groups = _by_cycle(records, lambda r: r["thresholding"])
    header = ["strategy", "cycle", "n", "val_acc", "avg_tau", "sel_frac", "pl_acc"]
    rows = []
    order = sorted(groups, key=lambda t: (t != "SAT", t))
    for tag in order:
        for k, recs in sorted(groups[tag].items()):
            row = [tag, str(k), str(len(recs))]
            row += [_fmt(_mean_std(r[f] for r in recs)[0]) for f in REPORT_FIELDS]
            rows.append(row)
    return _table(header, rows)


def read_log(path) -> list[dict]:
    p = Path(path)
    if not p.is_file():
        raise LogError(f"metrics log not found: {p}")
    records, seen = [], set()
    for n, line in enumerate(p.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as err:
            raise LogError(f"{p}:{n}: malformed record ({err.msg})") from None
        if not isinstance(rec, dict):
            raise LogError(f"{p}:{n}: malformed record (not an object)")
        missing = [f for f in REQUIRED_FIELDS if f not in rec]
        if missing:
            raise LogError(f"{p}:{n}: malformed record (missing {missing[0]})")
        key = (rec["run_id"], rec["cycle"])
        if key in seen:
            raise LogError(f"{p}:{n}: duplicate record for run {key[0]} cycle {key[1]}")
        seen.add(key)
        records.append(rec)
    return records


def report_rows(records) -> list[dict]:
    """Aggregates per (mode, thresholding, C, S, cycle): mean, population std and count."""
    groups = _by_cycle(records, lambda r: (r["mode"], r["thresholding"], r["cutoff"], r["scale"]))
    out = []
    for key, per_cycle in sorted(groups.items()):
        for k, recs in sorted(per_cycle.items()):
            row = dict(zip(("mode", "thresholding", "cutoff", "scale"), key), cycle=k)
            for f in REPORT_FIELDS:
                m, s, n = _mean_std(r[f] for r in recs)
                row[f] = {"mean": m, "std": s, "n": n}
            out.append(row)
    return out


def report_table(records) -> str:
    header = ["mode", "thresholding", "C", "S", "cycle"] + [f for f in REPORT_FIELDS] + ["n"]
    rows = []
    for row in report_rows(records):
        cells = [row["mode"], row["thresholding"], f"{row['cutoff']:g}", f"{row['scale']:g}", str(row["cycle"])]
        for f in REPORT_FIELDS:
            agg = row[f]
            cells.append("-" if agg["mean"] is None else f"{agg['mean']:.4f}+-{agg['std']:.4f}")
        cells.append(str(row["val_accuracy"]["n"]))
        rows.append(cells)
    return _table(header, rows)


def cmd_report(log_path) -> int:
    print(report_table(read_log(log_path)))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sst", description="Self-training with self-adaptive thresholding.")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_common(p):
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for seed replicates")
        return p

    with_common(sub.add_parser("run", help="train every configured replicate"))
    ab = with_common(sub.add_parser("ablate", help="sweep cutoff C and scale S from one shared init"))
    ab.add_argument("--cutoffs", type=_float_list, required=True)
    ab.add_argument("--scales", type=_float_list, required=True)
    cmp_ = with_common(sub.add_parser("compare-thresholding", help="SAT against fixed thresholds"))
    cmp_.add_argument("--constants", type=_float_list, default=[0.0, 0.25, 0.5, 0.75])
    rep = sub.add_parser("report", help="aggregate a metrics log over seeds")
    rep.add_argument("log")
    return parser


def _fail(kind: str, message: str, code: int) -> int:
    print(f"sst-error: {kind}: {' '.join(str(message).split())}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.out, args.jobs)
        if args.command == "ablate":
            return cmd_ablate(args.config, args.cutoffs, args.scales, args.out, args.jobs)
        if args.command == "compare-thresholding":
            return cmd_compare_thresholding(args.config, args.constants, args.out, args.jobs)
        return cmd_report(args.log)
    except ConfigError as err:
        return _fail("config", err, EXIT_INPUT)
    except LogError as err:
        return _fail("log", err, EXIT_INPUT)
    except TrainingDivergedError as err:
        return _fail("training", err, EXIT_TRAINING)
    except (CsvError, InvalidInputError) as err:
        return _fail("data", err, EXIT_INPUT)
    except OSError as err:
        return _fail("io", err, EXIT_INPUT)
