"""Trainable per-example label distributions.

Each example owns a row of label logits initialised at ``K * onehot(noisy)``;
its label distribution is the row softmax. Rows are updated by gradient
steps on those logits.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass

import numpy as np

from .special import one_hot, softmax

log = logging.getLogger(__name__)


class LabelStore:
    def __init__(self, y_tilde, noisy_labels, K, lambda_step):
        self.y_tilde = np.asarray(y_tilde, dtype=np.float64)
        noisy = np.array(noisy_labels, dtype=np.int64)
        noisy.flags.writeable = False
        self.noisy_labels = noisy
        self.K = float(K)
        self.lambda_step = float(lambda_step)
        self.refused_rows = 0

    @property
    def num_classes(self):
        return self.y_tilde.shape[1]

    def __len__(self):
        return self.y_tilde.shape[0]

    def copy(self):
        out = LabelStore(self.y_tilde.copy(), self.noisy_labels, self.K, self.lambda_step)
        out.refused_rows = self.refused_rows
        return out

    def corrected_labels(self):
        # np.argmax returns the lowest index among ties
        return np.argmax(self.y_tilde, axis=1)


def init_label_store(noisy_labels, num_classes, K=10.0, lambda_step=0.0):
    noisy = np.asarray(noisy_labels, dtype=np.int64)
    if noisy.size and (noisy.min() < 0 or noisy.max() >= num_classes):
        raise ValueError(f"noisy labels must lie in [0, {num_classes})")
    if K < 0:
        raise ValueError("K must be non-negative")
    return LabelStore(K * one_hot(noisy, num_classes), noisy, K, lambda_step)


def _check_indices(store, indices):
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= len(store)):
        raise IndexError(f"label index out of range [0, {len(store)})")
    return idx


def label_distribution(store, indices=None):
    if indices is None:
        return softmax(store.y_tilde)
    return softmax(store.y_tilde[_check_indices(store, indices)])


def update_labels(store, indices, grad1, grad2):
    """Descend the label logits of ``indices`` along the summed gradients.

    Rows whose summed gradient is non-finite are left untouched and counted
    in ``store.refused_rows``.
    """
    idx = _check_indices(store, indices)
    step = np.asarray(grad1, dtype=np.float64) + np.asarray(grad2, dtype=np.float64)
    if step.shape != (idx.shape[0], store.num_classes):
        raise ValueError(f"gradient shape {step.shape} does not match batch of {idx.shape[0]}")
    finite = np.all(np.isfinite(step), axis=1)
    if not finite.all():
        n_bad = int((~finite).sum())
        store.refused_rows += n_bad
        log.warning("refused label update for %d rows with non-finite gradients", n_bad)
        idx, step = idx[finite], step[finite]
    if store.lambda_step != 0.0:
        store.y_tilde[idx] -= store.lambda_step * step
    return store


@dataclass
class CorrectionTable:
    index: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    corrected: np.ndarray
    max_prob: np.ndarray
    summary: dict

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "clean", "noisy", "corrected", "max_prob"])
            for row in zip(self.index, self.clean, self.noisy, self.corrected, self.max_prob):
                writer.writerow([int(row[0]), int(row[1]), int(row[2]), int(row[3]), repr(float(row[4]))])

    def summary_json(self):
        return json.dumps(self.summary, indent=2, sort_keys=True)


def export_corrected(store, record):
    n = len(store)
    if len(record) != n:
        raise ValueError(f"corruption record has {len(record)} rows, store has {n}")
    dist = label_distribution(store)
    corrected = np.argmax(dist, axis=1)
    clean = record.clean_labels
    corrupted = record.corrupted_mask
    hit = corrected == clean
    n_corrupted = int(corrupted.sum())
    n_clean = n - n_corrupted
    summary = {
        "num_examples": n,
        "num_corrupted": n_corrupted,
        "recovery_rate": float(hit[corrupted].mean()) if n_corrupted else None,
        "preservation_rate": float(hit[~corrupted].mean()) if n_clean else None,
        "label_accuracy": float(hit.mean()),
        "num_changed": int((corrected != store.noisy_labels).sum()),
    }
    return CorrectionTable(np.arange(n), clean.copy(), store.noisy_labels.copy(), corrected,
                           dist.max(axis=1), summary)
