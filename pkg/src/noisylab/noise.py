"""Label-noise transition matrices and seeded label corruption."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import stats

NOISE_KINDS = ("symmetric", "pairflip")


@dataclass(frozen=True)
class NoiseModel:
    kind: str
    ratio: float
    transition: np.ndarray

    @property
    def num_classes(self):
        return self.transition.shape[0]


@dataclass(frozen=True)
class CorruptionRecord:
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    corrupted_mask: np.ndarray

    def __len__(self):
        return self.clean_labels.shape[0]

    @property
    def corruption_rate(self):
        return float(self.corrupted_mask.mean())

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "clean", "noisy", "corrupted"])
            for i, (c, n, m) in enumerate(zip(self.clean_labels, self.noisy_labels,
                                              self.corrupted_mask)):
                writer.writerow([i, int(c), int(n), int(bool(m))])

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        clean = np.array([int(r["clean"]) for r in rows], dtype=np.int64)
        noisy = np.array([int(r["noisy"]) for r in rows], dtype=np.int64)
        return cls(clean, noisy, clean != noisy)


def build_transition_matrix(kind, ratio, num_classes):
    if kind not in NOISE_KINDS:
        raise ValueError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"noise ratio must lie in [0, 1), got {ratio}")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    c = num_classes
    if kind == "symmetric":
        t = np.full((c, c), ratio / (c - 1))
        np.fill_diagonal(t, 1.0 - ratio)
    else:
        t = np.zeros((c, c))
        idx = np.arange(c)
        t[idx, idx] = 1.0 - ratio
        t[idx, (idx + 1) % c] += ratio
    return NoiseModel(kind, float(ratio), t)


def corrupt_labels(labels, model, seed):
    """Draw each noisy label independently from row ``T[clean]``."""
    clean = np.asarray(labels, dtype=np.int64)
    c = model.num_classes
    if clean.size and (clean.min() < 0 or clean.max() >= c):
        bad = int(np.flatnonzero((clean < 0) | (clean >= c))[0])
        raise ValueError(f"label {clean[bad]} at index {bad} is outside [0, {c})")
    rng = np.random.default_rng(seed)
    u = rng.random(clean.shape[0])
    cdf = np.cumsum(model.transition, axis=1)
    cdf[:, -1] = 1.0
    # class j is drawn iff cdf[j-1] <= u < cdf[j]; zero-mass classes are skipped
    noisy = (u[:, None] >= cdf[clean]).sum(axis=1).astype(np.int64)
    return CorruptionRecord(clean, noisy, clean != noisy)


def confusion_counts(record, num_classes):
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (record.clean_labels, record.noisy_labels), 1)
    return counts


def noise_statistics(record, model):
    """Realized corruption rate, its binomial 3-sigma envelope and a chi-squared fit.

    The chi-squared statistic pools the per-clean-class goodness-of-fit tests
    over cells with non-zero expected mass.
    """
    n = len(record)
    eps = model.ratio
    sigma = float(np.sqrt(eps * (1.0 - eps) / n)) if n else 0.0
    counts = confusion_counts(record, model.num_classes)
    chi2 = 0.0
    dof = 0
    for i in range(model.num_classes):
        row_n = counts[i].sum()
        support = model.transition[i] > 0
        if row_n == 0 or support.sum() < 2:
            continue
        expected = row_n * model.transition[i, support]
        chi2 += float(((counts[i, support] - expected) ** 2 / expected).sum())
        dof += int(support.sum()) - 1
    p_value = float(stats.chi2.sf(chi2, dof)) if dof else 1.0
    return {
        "num_examples": n,
        "expected_rate": eps,
        "realized_rate": record.corruption_rate,
        "envelope": [eps - 3 * sigma, eps + 3 * sigma],
        "within_envelope": bool(abs(record.corruption_rate - eps) <= 3 * sigma),
        "chi2": chi2,
        "dof": dof,
        "p_value": p_value,
        "confusion": counts.tolist(),
    }
