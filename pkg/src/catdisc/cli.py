"""Command-line entry points.

Subcommands: synth (write a synthetic EMB1 dataset), run (full pipeline),
split (splitter only, histogram CSV), cluster (affinity propagation only),
eval (metrics from prediction files), report (render the metrics table).

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, generate_synthetic, read_emb1, write_emb1, write_manifest, class_map
from .heads import TrainError, embed_batch
from .metrics import MetricError, StepReport, cluster_accuracy
from .pipeline import ConfigError, RunConfig, load_model, run_pipeline, _write_table
from .pseudo import ApConfig, affinity_propagation
from .split import SplitError, decisions_to_csv, fine_split

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="catdisc",
                                description="continual category discovery on embedding datasets")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labeled EMB1 dataset")
    s.add_argument("--classes", type=int, default=13)
    s.add_argument("--per-class", type=int, default=100)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--separation", type=float, default=10.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")

    r = sub.add_parser("run", help="run the full discovery pipeline")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--out", default=None, help="override the output directory")
    r.add_argument("--resume", action="store_true", help="reuse finished stage checkpoints")

    sp = sub.add_parser("split", help="old/new split of an embedding file against a checkpoint")
    sp.add_argument("--emb", required=True, help="EMB1 file of input features")
    sp.add_argument("--checkpoint", required=True, help="model checkpoint")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True, help="histogram CSV path")

    c = sub.add_parser("cluster", help="affinity propagation over an embedding file")
    c.add_argument("--emb", required=True)
    c.add_argument("--checkpoint", default=None, help="optional head to embed with first")
    c.add_argument("--damping", type=float, default=0.9)
    c.add_argument("--max-iter", type=int, default=500)
    c.add_argument("--out", required=True, help="cluster report JSON path")

    e = sub.add_parser("eval", help="cluster accuracy of a prediction file against truth")
    e.add_argument("--pred", required=True, help="JSON file with a list of integer labels")
    e.add_argument("--truth", required=True, help="JSON file with a list of integer labels")

    rp = sub.add_parser("report", help="render the metrics table from a run directory")
    rp.add_argument("--run-dir", required=True)
    rp.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return p


def _load_labels(path) -> np.ndarray:
    with open(path) as fh:
        doc = json.load(fh)
    return np.asarray(doc, dtype=np.int64)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MetricError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainError, SplitError, FloatingPointError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _dispatch(args) -> int:
    if args.cmd == "synth":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ds = generate_synthetic(args.classes, args.per_class, args.dim,
                                args.separation, args.seed)
        path = out / "dataset.emb1"
        write_emb1(ds, path)
        write_manifest(out / "manifest.json",
                       [{"index": 0, "train": path.name, "labeled": True}], class_map(ds))
        print(f"wrote {path} ({len(ds)} x {ds.dim})")
        return 0

    if args.cmd == "run":
        cfg = RunConfig.from_json(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        reports = run_pipeline(cfg, resume=args.resume)
        for r in reports:
            print(f"step {r.step_index}: M_all={r.m_all:.4f}"
                  + (f" M_o={r.m_old:.4f}" if r.m_old is not None else "")
                  + (f" M_f={r.m_f:.4f}" if r.m_f is not None else "")
                  + (f" M_d={r.m_d:.4f}" if r.m_d is not None else ""))
        return 0

    if args.cmd == "split":
        ds = read_emb1(args.emb)
        head, bank, _, _ = load_model(args.checkpoint)
        Z, _ = embed_batch(head, ds.features.astype(np.float64))
        decisions = fine_split(Z, bank, seed=args.seed)
        decisions_to_csv(decisions, args.out, hidden_truth=ds.labels)
        print(f"wrote {args.out} ({len(decisions)} rows)")
        return 0

    if args.cmd == "cluster":
        ds = read_emb1(args.emb)
        X = ds.features.astype(np.float64)
        if args.checkpoint:
            head, _, _, _ = load_model(args.checkpoint)
            X, _ = embed_batch(head, X)
        cfg = ApConfig(damping=args.damping, max_iter=args.max_iter)
        ex, assign, info = affinity_propagation(X, cfg)
        doc = {"novel_class_count": len(ex), "exemplars": [int(i) for i in ex],
               "sizes": [int((assign == e).sum()) for e in ex], **info}
        with open(args.out, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
        print(f"{len(ex)} clusters (converged={info['converged']})")
        return 0

    if args.cmd == "eval":
        pred = _load_labels(args.pred)
        truth = _load_labels(args.truth)
        acc, assignment = cluster_accuracy(pred, truth)
        print(json.dumps({"accuracy": acc,
                          "assignment": {str(k): v for k, v in sorted(assignment.items())}}))
        return 0

    if args.cmd == "report":
        run_dir = Path(args.run_dir)
        summary = run_dir / "run_summary.json"
        if not summary.exists():
            raise DataError(f"no run_summary.json in {run_dir}")
        with open(summary) as fh:
            doc = json.load(fh)
        reports = [StepReport(d["step_index"], d["m_all"], d["m_old"], d["m_new"],
                              d["m_f"], d["m_d"], d["novel_class_count_estimate"])
                   for d in doc["steps"]]
        if args.out:
            _write_table(reports, args.out)
            print(f"wrote {args.out}")
        else:
            _write_table(reports, "/dev/stdout")
        return 0

    raise ConfigError(f"unknown command {args.cmd}")


if __name__ == "__main__":
    sys.exit(main())
