"""Loss terms of the label-correction objective, their gradients, and the
symmetric-KL divergence between two networks' predictions.

Every term is a batch mean (1/B scaling). Probabilities are clamped below
by ``PROB_FLOOR`` before logs and quotients; parameter distances below
``DIST_FLOOR`` are clamped before the co-regularization power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .special import log_softmax

PROB_FLOOR = 1e-12
DIST_FLOOR = 1e-8
SIMPLEX_TOL = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.4
    xi: float = 0.1
    mu: float = -1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "xi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.xi > 0 and not self.mu < 0:
            raise ValueError("mu must be strictly negative when xi > 0")


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_o: float
    l_e: float
    l_d: float
    total: float
    per_sample_lc: np.ndarray


def _as_rows(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError(f"{name} must be a vector or a B x C matrix")
    return x


def check_simplex(x, name="distribution"):
    x = _as_rows(x, name)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} has non-finite entries")
    if x.min() < -SIMPLEX_TOL:
        raise ValueError(f"{name} has negative entries (min {x.min():.3g})")
    worst = np.abs(x.sum(axis=1) - 1.0).max()
    if worst > SIMPLEX_TOL:
        raise ValueError(f"{name} rows are not normalized (max deviation {worst:.3g})")
    return x


def _kl_rows(p, q):
    logp = np.log(np.maximum(p, PROB_FLOOR))
    logq = np.log(np.maximum(q, PROB_FLOOR))
    terms = np.where(p > 0, p * (logp - logq), 0.0)
    return terms.sum(axis=1)


def kl_divergence(p, q):
    """KL(p || q) in nats for two distributions over the same classes."""
    p = check_simplex(p, "p")
    q = check_simplex(q, "q")
    if p.shape != q.shape or p.shape[0] != 1:
        raise ValueError("kl_divergence expects two vectors of equal length")
    return float(_kl_rows(p, q)[0])


def divergence(p1, p2):
    """Batch mean of KL(p1_i, p2_i) + KL(p2_i, p1_i)."""
    p1 = check_simplex(p1, "p1")
    p2 = check_simplex(p2, "p2")
    if p1.shape != p2.shape:
        raise ValueError(f"shape mismatch {p1.shape} vs {p2.shape}")
    return float(np.mean(_kl_rows(p1, p2) + _kl_rows(p2, p1)))


def compat_loss(probs, label_dist):
    """Mean KL(prediction || label distribution).

    Returns the value, the per-sample KL values and the gradient with
    respect to ``label_dist``.
    """
    p = check_simplex(probs, "probs")
    yd = check_simplex(label_dist, "label_dist")
    b = p.shape[0]
    per_sample = _kl_rows(p, yd)
    grad = -p / np.maximum(yd, PROB_FLOOR) / b
    return float(per_sample.mean()), per_sample, grad


def compat_grad_logits(probs, label_dist):
    """Gradient of the mean compatibility KL with respect to network logits."""
    p = np.asarray(probs, dtype=np.float64)
    a = np.log(np.maximum(p, PROB_FLOOR)) - np.log(np.maximum(label_dist, PROB_FLOOR))
    return p * (a - (p * a).sum(axis=1, keepdims=True)) / p.shape[0]


def compat_grad_label_logits(probs, label_dist):
    """Gradient of the mean compatibility KL with respect to the label logits.

    Closed form of the softmax chain rule applied to ``compat_loss``'s
    label-distribution gradient; it avoids dividing by tiny probabilities.
    """
    p = np.asarray(probs, dtype=np.float64)
    yd = np.asarray(label_dist, dtype=np.float64)
    return (yd * p.sum(axis=1, keepdims=True) - p) / p.shape[0]


def _check_one_hot(y):
    y = _as_rows(y, "noisy_onehot")
    ok = np.all((y == 0.0) | (y == 1.0)) and np.all(y.sum(axis=1) == 1.0)
    if not ok:
        raise ValueError("noisy_onehot rows must be one-hot")
    return y


def origin_loss(noisy_onehot, label_dist):
    """Mean KL(one-hot noisy label || label distribution) and its label_dist gradient."""
    y = _check_one_hot(noisy_onehot)
    yd = check_simplex(label_dist, "label_dist")
    b = y.shape[0]
    safe = np.maximum(yd, PROB_FLOOR)
    value = -np.sum(y * np.log(safe)) / b
    return float(value), -y / safe / b


def origin_grad_label_logits(noisy_onehot, label_dist):
    y = np.asarray(noisy_onehot, dtype=np.float64)
    yd = np.asarray(label_dist, dtype=np.float64)
    return (yd * y.sum(axis=1, keepdims=True) - y) / y.shape[0]


def entropy_loss(probs):
    """Mean Shannon entropy of the predictions and its gradient w.r.t. logits."""
    p = check_simplex(probs, "probs")
    logp = np.log(np.maximum(p, PROB_FLOOR))
    plogp = np.where(p > 0, p * logp, 0.0)
    row_sum = plogp.sum(axis=1, keepdims=True)
    value = -row_sum.mean()
    grad = -p * (logp - row_sum) / p.shape[0]
    return float(value), grad


def co_regularization(dist, mu):
    """``dist**mu`` and its derivative, with dist clamped to DIST_FLOOR."""
    d = max(float(dist), DIST_FLOOR)
    return d ** mu, mu * d ** (mu - 1.0)


def co_regularization_grads(theta1, theta2, mu):
    """Penalty value and its gradients w.r.t. both flat parameter vectors.

    Returns ``(value, grad1, grad2, clamped)``; ``clamped`` flags a distance
    below DIST_FLOOR.
    """
    diff = theta1 - theta2
    dist = float(np.linalg.norm(diff))
    value, deriv = co_regularization(dist, mu)
    clamped = dist < DIST_FLOOR
    if dist > 0.0:
        g1 = (deriv / dist) * diff
    else:
        g1 = np.zeros_like(diff)
    return value, g1, -g1, clamped


def cross_entropy(logits, labels):
    """Per-sample cross-entropy on hard labels and the mean-loss logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    b = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(b)
    per_sample = -logp[rows, labels]
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return per_sample, grad / b


def softmax_vjp(label_dist, grad_dist):
    """Chain a gradient w.r.t. softmax outputs back to the softmax inputs."""
    yd = np.asarray(label_dist, dtype=np.float64)
    g = np.asarray(grad_dist, dtype=np.float64)
    return yd * (g - (g * yd).sum(axis=1, keepdims=True))


def total_loss(probs, label_dist, noisy_onehot, dist, weights):
    l_c, per_sample, _ = compat_loss(probs, label_dist)
    l_o = origin_loss(noisy_onehot, label_dist)[0]
    l_e = entropy_loss(probs)[0]
    l_d = co_regularization(dist, weights.mu)[0]
    total = l_c + weights.alpha * l_o + weights.beta * l_e + weights.xi * l_d
    return LossBreakdown(l_c, l_o, l_e, l_d, total, per_sample)

