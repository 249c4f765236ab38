"""Campaign orchestration: seeded trials, artifact layout and strategy comparisons.

Layout under ``output_dir``::

    <strategy>/noise.csv
    <strategy>/aggregate.json
    <strategy>/<trial>/{metrics.csv, summary.json, net1.ckpt, net2.ckpt, corrections.csv}
    comparison.csv                      (compare_strategies only)
"""

from __future__ import annotations

import csv
import json
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import data as D
from .metrics import MetricsWriter, aggregate_trials
from .nn import save_checkpoint
from .noise import build_transition_matrix, corrupt_labels
from .trainers import run

log = logging.getLogger(__name__)


def trial_name(seeds):
    return "seed-" + "-".join(str(s) for s in seeds)


def check_resources(spec):
    if spec.dataset.kind != "mnist":
        return
    root = Path(spec.dataset.mnist_dir)
    for images, labels in D.MNIST_FILES.values():
        for name in (images, labels):
            if not (root / name).is_file():
                raise FileNotFoundError(f"MNIST file {root / name} not found")


def load_datasets(ds):
    if ds.kind == "blobs":
        full = D.make_blobs(ds.blobs_num_per_class, ds.blobs_num_classes, ds.blobs_dim,
                            ds.blobs_spread, ds.blobs_seed)
        return D.split(full, ds.blobs_train_fraction, ds.split_seed)
    train, test = D.load_mnist_dir(ds.mnist_dir)
    if ds.mnist_protocol == "split":
        # 50k / 10k carved out of the 60k training file
        return D.split(train, 5.0 / 6.0, ds.split_seed)
    return train, test


def make_noise(spec, train):
    model = build_transition_matrix(spec.noise.kind, spec.noise.ratio, train.num_classes)
    return model, corrupt_labels(train.labels, model, spec.noise.seed)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _run_trial(spec, seeds, train, test, record, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    config = replace(spec.train, seeds=tuple(seeds))
    with MetricsWriter(out_dir / "metrics.csv") as writer:
        result = run(config, train, test, record, on_epoch=writer.write)
    for k, model in enumerate(result.models, start=1):
        save_checkpoint(model, out_dir / f"net{k}.ckpt")
    summary = {"strategy": config.strategy, "seeds": list(seeds), **result.metrics.summary}
    if result.corrections is not None:
        result.corrections.to_csv(out_dir / "corrections.csv")
        summary["corrections"] = result.corrections.summary
    _write_json(out_dir / "summary.json", summary)
    return result.metrics


def _trial_worker(spec, seeds, out_dir):
    # worker processes rebuild data and noise; both are pure functions of the spec
    train, test = load_datasets(spec.dataset)
    _, record = make_noise(spec, train)
    return _run_trial(spec, seeds, train, test, record, out_dir)


def run_experiment(spec, jobs=1, datasets=None):
    """Run every trial of ``spec`` and write per-trial and aggregate artifacts.

    A failing trial is recorded and the remaining trials still run; the
    returned report lists failures under ``"failures"``.
    """
    check_resources(spec)
    train, test = datasets if datasets is not None else load_datasets(spec.dataset)
    _, record = make_noise(spec, train)
    base = Path(spec.output_dir) / spec.train.strategy
    base.mkdir(parents=True, exist_ok=True)
    record.to_csv(base / "noise.csv")
    _write_json(base / "config.json", spec.resolved)

    outcomes = {}
    if jobs > 1 and len(spec.trials) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {seeds: pool.submit(_trial_worker, spec, seeds, base / trial_name(seeds))
                       for seeds in spec.trials}
            for seeds, fut in futures.items():
                try:
                    outcomes[seeds] = fut.result()
                except Exception as exc:  # noqa: BLE001 - recorded, campaign continues
                    outcomes[seeds] = exc
    else:
        for seeds in spec.trials:
            try:
                outcomes[seeds] = _run_trial(spec, seeds, train, test, record,
                                             base / trial_name(seeds))
            except Exception as exc:  # noqa: BLE001 - recorded, campaign continues
                log.error("trial %s failed:\n%s", seeds, traceback.format_exc())
                outcomes[seeds] = exc

    trials, runs, failures = [], [], []
    for seeds in spec.trials:
        out = outcomes[seeds]
        entry = {"seeds": list(seeds), "dir": trial_name(seeds)}
        if isinstance(out, Exception):
            entry["status"] = "failed"
            entry["error"] = f"{type(out).__name__}: {out}"
            failures.append(entry)
        else:
            entry["status"] = "ok"
            entry.update(out.summary)
            runs.append(out)
        trials.append(entry)
    report = {
        "strategy": spec.train.strategy,
        "trials": trials,
        "aggregate": aggregate_trials(runs) if runs else None,
        "failures": failures,
    }
    _write_json(base / "aggregate.json", report)
    return report


COMPARISON_HEADER = ["strategy", "mean_best_acc", "mean_last10_acc", "box_min", "box_q1",
                     "box_median", "box_q3", "box_max", "num_trials", "num_failures"]


def compare_strategies(spec, strategies, jobs=1):
    """One campaign per strategy on identical noisy labels; writes comparison.csv."""
    strategies = list(strategies)
    check_resources(spec)
    datasets = load_datasets(spec.dataset)
    rows, reports = [], {}
    for strategy in strategies:
        report = run_experiment(spec.with_strategy(strategy), jobs=jobs, datasets=datasets)
        reports[strategy] = report
        agg = report["aggregate"]
        if agg is None:
            cells = [None] * 7
        else:
            box = agg["box"]
            cells = [agg["mean_best_acc"], agg["mean_last10_acc"], box["min"], box["q1"],
                     box["median"], box["q3"], box["max"]]
        rows.append([strategy, *cells, len(report["trials"]), len(report["failures"])])
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "comparison.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARISON_HEADER)
        for row in rows:
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v)
                             for v in row])
    return rows, reports
