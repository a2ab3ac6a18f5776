"""``vqc`` command line: run experiments, evaluate checkpoints, inspect artifacts."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .artifacts import load_checkpoint, load_dataset, read_artifact
from .config import load_config
from .diagnostics import evaluate
from .errors import VqcError
from .experiments import run_experiment

log = logging.getLogger("vqc")


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    if args.seed_override is not None:
        cfg = replace(cfg, seeds=(args.seed_override,))
    result = run_experiment(cfg, workers=args.workers)
    diverged = [r["cell"] for r in result["records"] if r["status"] != "ok"]
    for cell in diverged:
        log.error("cell %s diverged", cell)
    print(f"wrote {len(result['rows'])} report rows to {cfg.out_dir / 'report.csv'}")
    if cfg.kind == "single-run" and diverged:
        return 3
    return 0


def _cmd_eval(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    report = evaluate(model, ds, meta.get("epsilon", 3.0), meta.get("threshold", 4.0))
    out = report.scalars()
    out["usage_histogram"] = report.usage_histogram.tolist()
    print(json.dumps(out, indent=2))
    return 0


def _describe(value):
    if isinstance(value, np.ndarray):
        return {"dtype": str(value.dtype), "shape": list(value.shape)}
    return value


def _cmd_dump(args) -> int:
    kind, sections = read_artifact(args.artifact)
    print(json.dumps({"kind": kind.decode(),
                      "sections": {k: _describe(v) for k, v in sections.items()}},
                     indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vqc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--out", type=Path, default=None)
    run.add_argument("--workers", type=int, default=None,
                     help="parallel cells (default: $VQC_WORKERS or 1)")
    run.add_argument("--seed-override", type=int, default=None)
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    ev.add_argument("checkpoint")
    ev.add_argument("dataset")
    ev.set_defaults(func=_cmd_eval)

    dump = sub.add_parser("dump", help="list the sections of a checkpoint/dataset/dump file")
    dump.add_argument("artifact")
    dump.set_defaults(func=_cmd_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VqcError as exc:
        print(f"vqc: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"vqc: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
