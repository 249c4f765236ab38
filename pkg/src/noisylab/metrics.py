"""Accuracy, divergence tracking, per-epoch records and trial aggregation."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .losses import divergence
from .nn import predict_proba

CSV_HEADER = ["epoch", "train_acc1", "train_acc2", "test_acc1", "test_acc2", "divergence",
              "l_c", "l_o", "l_e", "l_d", "clamp_events", "skipped_steps"]


@dataclass
class EpochRecord:
    epoch: int
    train_acc1: float | None = None
    train_acc2: float | None = None
    test_acc1: float | None = None
    test_acc2: float | None = None
    divergence: float | None = None
    l_c: float | None = None
    l_o: float | None = None
    l_e: float | None = None
    l_d: float | None = None
    clamp_events: int = 0
    skipped_steps: int = 0

    @property
    def test_acc(self):
        """Mean of the two networks' test accuracies, or the single network's."""
        if self.test_acc2 is None:
            return self.test_acc1
        return (self.test_acc1 + self.test_acc2) / 2.0

    def csv_row(self):
        return [_fmt(getattr(self, name)) for name in CSV_HEADER]


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _parse(name, text):
    if text == "":
        return None
    if name in ("epoch", "clamp_events", "skipped_steps"):
        return int(text)
    return float(text)


@dataclass
class RunMetrics:
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def append(self, record):
        self.records.append(record)

    def test_accuracies(self):
        return [r.test_acc for r in self.records]

    def last_window(self, window=10):
        return self.test_accuracies()[-window:]

    @property
    def summary(self):
        accs = self.test_accuracies()
        if not accs:
            return {"best_acc": None, "last10_mean_acc": None, "argbest_epoch": None}
        best = int(np.argmax(accs))
        last = self.last_window()
        return {
            "best_acc": accs[best],
            "last10_mean_acc": math.fsum(last) / len(last),
            "argbest_epoch": self.records[best].epoch,
        }

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for r in self.records:
                writer.writerow(r.csv_row())


class MetricsWriter:
    """Streams epoch rows to CSV; each row is one write followed by fsync."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="")
        self._emit(CSV_HEADER)

    def _emit(self, cells):
        self._fh.write(",".join(cells) + "\n")
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def write(self, record):
        self._emit(record.csv_row())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        metrics = RunMetrics()
        for row in reader:
            metrics.append(EpochRecord(**{k: _parse(k, v) for k, v in row.items()}))
    return metrics


def accuracy(predictions, labels):
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"length mismatch: {predictions.shape} vs {labels.shape}")
    if predictions.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return int(np.count_nonzero(predictions == labels)) / predictions.size


def epoch_divergence(model1, model2, features, batch_size=2048):
    p1 = predict_proba(model1, features, batch_size)
    p2 = predict_proba(model2, features, batch_size)
    return divergence(p1, p2)


def divergence_accuracy_bins(history, num_bins, value_range=None):
    """Mean accuracy in equal-width divergence bins.

    Bins span the observed divergence range unless ``value_range`` is given.
    Returns a list of dicts ``{lo, hi, count, mean_acc}``; empty bins carry
    ``mean_acc=None``. The top edge belongs to the last bin.
    """
    if num_bins < 2:
        raise ValueError("num_bins must be >= 2")
    if not history:
        raise ValueError("history is empty")
    div = np.array([h[0] for h in history], dtype=np.float64)
    acc = np.array([h[1] for h in history], dtype=np.float64)
    lo, hi = value_range if value_range is not None else (float(div.min()), float(div.max()))
    if div.min() < lo or div.max() > hi:
        raise ValueError("history falls outside value_range")
    edges = np.linspace(lo, hi, num_bins + 1)
    if hi > lo:
        which = np.minimum(((div - lo) / (hi - lo) * num_bins).astype(np.int64), num_bins - 1)
    else:
        which = np.zeros(div.shape[0], dtype=np.int64)
    out = []
    for b in range(num_bins):
        members = acc[which == b]
        out.append({
            "lo": float(edges[b]),
            "hi": float(edges[b + 1]),
            "count": int(members.size),
            "mean_acc": float(members.mean()) if members.size else None,
        })
    return out


def box_statistics(values):
    """Five-number summary plus mean; quartiles use linear interpolation
    between order statistics (position ``q * (n - 1)``)."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("no values to summarise")
    q1, med, q3 = np.percentile(v, [25, 50, 75], method="linear")
    return {
        "min": float(v.min()), "q1": float(q1), "median": float(med), "q3": float(q3),
        "max": float(v.max()), "mean": float(v.mean()), "count": int(v.size),
    }


def aggregate_trials(runs, window=10):
    if not runs:
        raise ValueError("aggregate_trials needs at least one run")
    pooled = [a for run in runs for a in run.last_window(window)]
    summaries = [run.summary for run in runs]
    return {
        "box": box_statistics(pooled),
        "mean_best_acc": float(np.mean([s["best_acc"] for s in summaries])),
        "mean_last10_acc": float(np.mean([s["last10_mean_acc"] for s in summaries])),
        "num_trials": len(runs),
    }
