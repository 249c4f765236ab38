"""Command-line entry point: ``noisylab {run,compare,inspect,gen-blobs,noise-check}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import config as C
from .data import make_blobs
from .harness import compare_strategies, load_datasets, make_noise, run_experiment
from .metrics import divergence_accuracy_bins, read_metrics_csv
from .noise import noise_statistics
from .trainers import STRATEGIES


def _load_spec(ref, output_dir=None):
    path = Path(ref)
    if not path.is_file() and ref in C.PRESETS:
        spec = C.preset_spec(ref)
    else:
        spec = C.parse_config(path)
    if output_dir is not None:
        spec = replace(spec, output_dir=Path(output_dir))
    return spec


def cmd_run(args):
    spec = _load_spec(args.config, args.output_dir)
    report = run_experiment(spec, jobs=args.jobs)
    print(json.dumps({"strategy": report["strategy"], "aggregate": report["aggregate"],
                      "failures": report["failures"]}, indent=2))
    return 1 if report["failures"] else 0


def cmd_compare(args):
    spec = _load_spec(args.config, args.output_dir)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    unknown = [s for s in strategies if s not in STRATEGIES]
    if unknown:
        print(f"unknown strategies {unknown}; choose from {list(STRATEGIES)}", file=sys.stderr)
        return 2
    rows, reports = compare_strategies(spec, strategies, jobs=args.jobs)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["strategy", "mean_best_acc", "mean_last10_acc", "num_failures"])
    for row in rows:
        writer.writerow([row[0], row[1], row[2], row[-1]])
    return 1 if any(r["failures"] for r in reports.values()) else 0


def cmd_inspect(args):
    metrics = read_metrics_csv(args.metrics)
    out = {"epochs": len(metrics.records), **metrics.summary}
    last = metrics.records[-1] if metrics.records else None
    if last is not None:
        out["final_divergence"] = last.divergence
    history = [(r.divergence, r.test_acc) for r in metrics.records
               if r.divergence is not None and r.test_acc is not None]
    if args.bins and history:
        out["divergence_bins"] = divergence_accuracy_bins(history, args.bins)
    print(json.dumps(out, indent=2))
    return 0


def cmd_gen_blobs(args):
    ds = make_blobs(args.num_per_class, args.num_classes, args.dim, args.spread, args.seed)
    out = open(args.out, "w", newline="") if args.out != "-" else sys.stdout
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow([f"x{j}" for j in range(ds.dim)] + ["label"])
    for x, y in zip(ds.features, ds.labels):
        writer.writerow([repr(float(v)) for v in x] + [int(y)])
    if out is not sys.stdout:
        out.close()
    return 0


def cmd_noise_check(args):
    spec = _load_spec(args.config)
    train, _ = load_datasets(spec.dataset)
    model, record = make_noise(spec, train)
    stats = noise_statistics(record, model)
    stats["kind"] = model.kind
    print(json.dumps(stats, indent=2))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="noisylab",
                                     description="Noise-tolerant training experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every trial of a config (or preset name)")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several strategies on identical noisy labels")
    p.add_argument("config")
    p.add_argument("--strategies", required=True, help="comma separated, e.g. standard,mlc")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="summarise a metrics.csv file")
    p.add_argument("metrics")
    p.add_argument("--bins", type=int, default=0,
                   help="also report mean accuracy per divergence bin")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen-blobs", help="write a synthetic blobs dataset as CSV")
    p.add_argument("--num-per-class", type=int, default=100)
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_gen_blobs)

    p = sub.add_parser("noise-check", help="dry-run the configured label corruption")
    p.add_argument("config")
    p.set_defaults(func=cmd_noise_check)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (C.ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
