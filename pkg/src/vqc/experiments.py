"""Experiment matrix: cells of (arm, seed, sweep value), paired summaries, CSV reports."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .artifacts import save_checkpoint, save_dataset, save_dump
from .codebook import perplexity
from .config import ExperimentConfig
from .diagnostics import evaluate
from .errors import ArtifactError, DivergenceError
from .synthdata import generate, train_test_split
from .vqvae import TrainConfig, forward_vq, pretrain_then_finetune

log = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
REPORT_HEADER = (
    "experiment", "arm", "seed", "sweep_value", "checkpoint", "recon_mse", "perplexity",
    "entropy_ratio", "mode_coverage", "ood_fraction", "dead_token_fraction",
)
SUMMARY_HEADER = (
    "experiment", "seed", "sweep_value", "baseline_perplexity", "remedy_perplexity",
    "perplexity_gap", "baseline_mse", "remedy_mse", "baseline_entropy_ratio",
    "remedy_entropy_ratio", "baseline_init_perplexity", "remedy_init_perplexity",
    "baseline_epoch1_perplexity", "remedy_epoch1_perplexity", "winner",
)


@dataclass(frozen=True)
class ReportRow:
    experiment: str
    arm: str
    seed: int
    sweep_value: int
    checkpoint: str
    recon_mse: float
    perplexity: float
    entropy_ratio: float
    mode_coverage: float
    ood_fraction: float
    dead_token_fraction: float

    def to_csv(self) -> list[str]:
        return [v if isinstance(v, str) else repr(v) for v in asdict(self).values()]

    @classmethod
    def from_csv(cls, row: dict[str, str]) -> "ReportRow":
        kw = {}
        for f in fields(cls):
            v = row[f.name]
            kw[f.name] = int(v) if f.type == "int" else float(v) if f.type == "float" else v
        return cls(**kw)


@dataclass(frozen=True)
class Cell:
    experiment: str
    arm: str
    seed: int
    dim: int
    sweep_value: int
    train: TrainConfig

    @property
    def key(self) -> str:
        return f"{self.experiment}__{self.arm}__d{self.dim}__v{self.sweep_value}__s{self.seed}"


def _arm_configs(cfg: ExperimentConfig, seed: int, **overrides) -> dict[str, TrainConfig]:
    base = replace(cfg.train, seed=seed, **overrides)
    return {
        "baseline": replace(base, epochs=cfg.baseline_epochs, pretrain_epochs=0),
        "remedy": replace(base, epochs=cfg.finetune_epochs, pretrain_epochs=cfg.pretrain_epochs),
    }


def plan_cells(cfg: ExperimentConfig) -> list[Cell]:
    """Every training run the experiment needs, in a fixed order."""
    cells = []
    name = cfg.experiment_id
    for seed in cfg.seeds:
        if cfg.kind == "tokens-collapse-ablation":
            for dim in cfg.dims:
                for arm, tc in _arm_configs(cfg, seed).items():
                    cells.append(Cell(name, arm, seed, dim, dim, tc))
        elif cfg.kind == "codebook-size-sweep":
            for dim in cfg.dims:
                for size in cfg.sweep:
                    for arm, tc in _arm_configs(cfg, seed, codebook_size=size).items():
                        cells.append(Cell(name, arm, seed, dim, size, tc))
        elif cfg.kind == "capacity-sweep":
            for dim in cfg.dims:
                for hidden in cfg.sweep:
                    tc = replace(cfg.train, seed=seed, encoder_hidden=hidden,
                                 epochs=cfg.baseline_epochs, pretrain_epochs=0)
                    cells.append(Cell(name, "baseline", seed, dim, hidden, tc))
        else:
            arm = "remedy" if cfg.train.pretrain_epochs > 0 else "baseline"
            for dim in cfg.dims:
                cells.append(Cell(name, arm, seed, dim, dim, replace(cfg.train, seed=seed)))
    return cells


def _datasets(cfg: ExperimentConfig, dim: int):
    ds = generate(replace(cfg.data, dim=dim))
    train, test = train_test_split(ds, cfg.test_fraction, cfg.split_seed)
    return ds, train, test


def run_cell(cell: Cell, cfg: ExperimentConfig, artifact_dir: Path | None = None) -> dict:
    """Train one arm and evaluate it on the held-out split.

    Returns a JSON-serializable record; divergence is recorded, not raised.
    """
    ds, train, test = _datasets(cfg, cell.dim)
    record = {"cell": cell.key, "experiment": cell.experiment, "arm": cell.arm,
              "seed": cell.seed, "dim": cell.dim, "sweep_value": cell.sweep_value,
              "train": asdict(cell.train)}
    try:
        model, pre, vq = pretrain_then_finetune(train, cell.train)
    except DivergenceError as exc:
        log.warning("cell %s diverged: %s", cell.key, exc)
        record.update(status="diverged", error=str(exc))
        return record
    report = evaluate(model, test, cfg.epsilon, cfg.threshold)
    first = (pre.records or vq.records)[0].recon_loss if (pre.records or vq.records) else math.nan
    record.update(
        status="ok",
        metrics=report.scalars(),
        usage_histogram=report.usage_histogram.tolist(),
        init_perplexity=vq.init_perplexity,
        first_vq_epoch_perplexity=vq.records[0].perplexity if vq.records else math.nan,
        first_epoch_recon=first,
        final_train_recon=vq.records[-1].recon_loss if vq.records else math.nan,
        final_commit=vq.records[-1].commit_loss if vq.records else math.nan,
        all_finite=bool(np.all(np.isfinite(
            [r.recon_loss for r in pre.records + vq.records]
            + [r.commit_loss for r in vq.records]))),
        pretrain_recon=[r.recon_loss for r in pre.records],
        vq_recon=[r.recon_loss for r in vq.records],
        vq_commit=[r.commit_loss for r in vq.records],
        vq_perplexity=[r.perplexity for r in vq.records],
    )
    if artifact_dir is not None:
        write_single_artifacts(artifact_dir, model, ds, test, cell, cfg)
    return record


def write_single_artifacts(out: Path, model, ds, test, cell: Cell, cfg: ExperimentConfig) -> None:
    meta = {"experiment": cell.experiment, "arm": cell.arm, "seed": cell.seed,
            "train": asdict(cell.train), "epsilon": cfg.epsilon, "threshold": cfg.threshold}
    save_checkpoint(out / "checkpoint.vqc", model, meta)
    save_dataset(out / "dataset.vqc", ds)
    save_dataset(out / "test.vqc", test)
    fwd = forward_vq(model, test.samples)
    save_dump(out / "dump.vqc", fwd.embeddings, model.codebook.tokens, fwd.assignment,
              test.labels, {"split": "test", "codebook_size": model.codebook.size})


def record_to_row(rec: dict) -> ReportRow:
    if rec["status"] != "ok":
        nan = math.nan
        return ReportRow(rec["experiment"], rec["arm"], rec["seed"], rec["sweep_value"],
                         "diverged", nan, nan, nan, nan, nan, nan)
    m = rec["metrics"]
    return ReportRow(
        rec["experiment"], rec["arm"], rec["seed"], rec["sweep_value"], "final",
        m["test_mse"], m["codebook_perplexity"], m["allocation_entropy_ratio"],
        m["mode_coverage"], m["ood_fraction"], m["dead_token_fraction"],
    )


def winner(baseline: ReportRow, remedy: ReportRow) -> str:
    """``remedy``/``baseline`` if one arm has both lower MSE and higher perplexity."""
    if remedy.recon_mse < baseline.recon_mse and remedy.perplexity > baseline.perplexity:
        return "remedy"
    if baseline.recon_mse < remedy.recon_mse and baseline.perplexity > remedy.perplexity:
        return "baseline"
    return "mixed"


def paired_summary(records: list[dict]) -> list[dict]:
    by_key = {}
    for rec in records:
        by_key.setdefault((rec["seed"], rec["sweep_value"]), {})[rec["arm"]] = rec
    out = []
    for (seed, value), arms in sorted(by_key.items()):
        if set(arms) != {"baseline", "remedy"}:
            continue
        b, r = record_to_row(arms["baseline"]), record_to_row(arms["remedy"])
        out.append({
            "experiment": b.experiment, "seed": seed, "sweep_value": value,
            "baseline_perplexity": b.perplexity, "remedy_perplexity": r.perplexity,
            "perplexity_gap": r.perplexity - b.perplexity,
            "baseline_mse": b.recon_mse, "remedy_mse": r.recon_mse,
            "baseline_entropy_ratio": b.entropy_ratio, "remedy_entropy_ratio": r.entropy_ratio,
            "baseline_init_perplexity": arms["baseline"].get("init_perplexity", math.nan),
            "remedy_init_perplexity": arms["remedy"].get("init_perplexity", math.nan),
            "baseline_epoch1_perplexity": arms["baseline"].get("first_vq_epoch_perplexity", math.nan),
            "remedy_epoch1_perplexity": arms["remedy"].get("first_vq_epoch_perplexity", math.nan),
            "winner": winner(b, r),
        })
    return out


def _nondecreasing(values) -> bool:
    return all(b >= a for a, b in zip(values[:-1], values[1:]))


def trend_summary(cfg: ExperimentConfig, records: list[dict]) -> dict:
    """Per-seed trends over the sweep values."""
    rows = [record_to_row(r) for r in records]
    out = {}
    for seed in cfg.seeds:
        mine = sorted((r for r in rows if r.seed == seed), key=lambda r: r.sweep_value)
        if cfg.kind == "codebook-size-sweep":
            base = {r.sweep_value: r for r in mine if r.arm == "baseline"}
            rem = {r.sweep_value: r for r in mine if r.arm == "remedy"}
            sizes = [s for s in cfg.sweep if s in base and s in rem]
            gaps = [rem[s].perplexity - base[s].perplexity for s in sizes]
            out[str(seed)] = {
                "sizes": sizes, "gap": gaps,
                "remedy_perplexity": [rem[s].perplexity for s in sizes],
                "gap_nondecreasing": _nondecreasing(gaps),
                "gap_last_exceeds_first": bool(gaps and gaps[-1] > gaps[0]),
                "remedy_nondecreasing": _nondecreasing([rem[s].perplexity for s in sizes]),
            }
        elif cfg.kind == "capacity-sweep":
            out[str(seed)] = {
                "hidden": [r.sweep_value for r in mine],
                "mode_coverage": [r.mode_coverage for r in mine],
                "ood_fraction": [r.ood_fraction for r in mine],
                "recon_mse": [r.recon_mse for r in mine],
                "mse_nonincreasing": _nondecreasing([-r.recon_mse for r in mine]),
                "coverage_nondecreasing": _nondecreasing([r.mode_coverage for r in mine]),
            }
    return out


def write_report(path: Path, rows: list[ReportRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for row in rows:
            w.writerow(row.to_csv())


def read_report(path) -> list[ReportRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise ArtifactError(f"{path}: unexpected report header {reader.fieldnames}")
        return [ReportRow.from_csv(r) for r in reader]


def _write_summary(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_HEADER)
        w.writeheader()
        for row in rows:
            w.writerow({k: v if isinstance(v, str) else repr(v) for k, v in row.items()})


def _run_one(args):
    cell, cfg, artifact_dir = args
    return run_cell(cell, cfg, artifact_dir)


def resolve_workers(workers: int | None) -> int:
    if workers is None:
        workers = int(os.environ.get("VQC_WORKERS", "1"))
    return max(1, workers)


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Run (or resume) every cell of ``cfg`` and write the reports into ``cfg.out_dir``.

    Finished cells are cached under ``cells/`` and skipped on re-invocation.
    Returns ``{"records", "rows", "summary", "trend"}``.
    """
    out = Path(cfg.out_dir)
    cell_dir = out / "cells"
    try:
        cell_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ArtifactError(f"cannot create {out}: {exc}") from exc
    workers = resolve_workers(workers)
    cells = plan_cells(cfg)
    done, todo = {}, []
    for cell in cells:
        path = cell_dir / f"{cell.key}.json"
        if path.exists():
            done[cell.key] = json.loads(path.read_text())
        else:
            todo.append(cell)
    log.info("%d cells planned, %d cached, %d to run", len(cells), len(done), len(todo))
    single_dir = out if cfg.kind == "single-run" and len(cells) == 1 else None
    jobs = [(c, cfg, single_dir) for c in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_one, jobs)
            for cell, rec in zip(todo, results):
                _store(cell_dir, cell, rec, done)
    else:
        for job in jobs:
            _store(cell_dir, job[0], _run_one(job), done)
    records = [done[c.key] for c in cells]
    rows = [record_to_row(r) for r in records]
    write_report(out / "report.csv", rows)
    summary = paired_summary(records) if cfg.kind != "capacity-sweep" else []
    if cfg.kind in ("tokens-collapse-ablation", "codebook-size-sweep"):
        _write_summary(out / "summary.csv", summary)
    trend = trend_summary(cfg, records)
    if trend:
        (out / "trend.json").write_text(json.dumps(trend, indent=2, sort_keys=True))
    manifest = {
        "report_schema_version": REPORT_SCHEMA_VERSION,
        "report_header": list(REPORT_HEADER),
        "experiment": cfg.experiment_id,
        "kind": cfg.kind,
        "workers": workers,
        "mse_convention": "mean over elements of the scaled test split",
        "ema_count_reading": "per-token L_k",
        "cells": [c.key for c in cells],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return {"records": records, "rows": rows, "summary": summary, "trend": trend}


def _store(cell_dir: Path, cell: Cell, rec: dict, done: dict) -> None:
    (cell_dir / f"{cell.key}.json").write_text(json.dumps(rec, indent=1))
    done[cell.key] = rec
