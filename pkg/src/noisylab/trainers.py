"""Training strategies for noisy labels.

``standard``                  one network, cross-entropy on the noisy labels.
``coteaching``                two networks; each trains on its peer's small-loss picks.
``coteaching_independent``    as above but each network trains on its own picks.
``coteaching_plus``           cross-update restricted to samples the networks disagree on.
``mlc``                       mutual label correction: co-teaching style cross-updates on
                              the label-correction objective, a parameter-distance
                              co-regulariser and label logits updated with the summed
                              gradients of both networks.
``pencil``                    single-network label correction with the same objective.

The label-correction strategies run in three stages: ``warmup`` (labels frozen at
initialisation), ``correction`` (labels updated every batch) and ``finetune``
(labels frozen, loss reduced to the compatibility term plus co-regularisation).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .labels import export_corrected, init_label_store, label_distribution, update_labels
from .metrics import EpochRecord, RunMetrics, accuracy
from .nn import AdamState, MlpModel, adam_step, backward, forward, predict_proba
from .special import one_hot

log = logging.getLogger(__name__)

STRATEGIES = ("standard", "coteaching", "coteaching_independent", "coteaching_plus", "mlc",
              "pencil")
DUAL_STRATEGIES = ("coteaching", "coteaching_independent", "coteaching_plus", "mlc")
CORRECTING_STRATEGIES = ("mlc", "pencil")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message, snapshot):
        super().__init__(f"{message}: {snapshot}")
        self.snapshot = snapshot


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "mlc"
    epochs_total: int = 320
    epochs_warmup: int = 30
    epochs_finetune: int = 180
    batch_size: int = 128
    lr_schedule: tuple = ((0, 1e-3), (140, 1e-4))
    # None means "use the injected noise ratio"; the harness fills it in
    forget_rate: float | None = None
    forget_horizon: int = 10
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    lambda_step: float = 1000.0
    K: float = 10.0
    seeds: tuple = (1, 2, 3)
    hidden_dims: tuple = (256,)
    warmup_plain_ce: bool = False
    # test-time forward passes only; does not affect training arithmetic
    eval_batch_size: int = 2048

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        for name in ("epochs_total", "epochs_warmup", "epochs_finetune"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.epochs_warmup + self.epochs_finetune > self.epochs_total:
            raise ValueError("epochs_warmup + epochs_finetune must not exceed epochs_total")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if not self.lr_schedule or self.lr_schedule[0][0] != 0:
            raise ValueError("lr_schedule must start with a breakpoint at epoch 0")
        starts = [e for e, _ in self.lr_schedule]
        if starts != sorted(set(starts)):
            raise ValueError("lr_schedule breakpoints must be strictly increasing")
        if any(rate < 0 for _, rate in self.lr_schedule):
            raise ValueError("learning rates must be non-negative")
        if self.forget_rate is not None and not 0.0 <= self.forget_rate < 1.0:
            raise ValueError("forget_rate must lie in [0, 1)")
        if self.forget_horizon < 1:
            raise ValueError("forget_horizon must be positive")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if len(self.seeds) != 3:
            raise ValueError("seeds must be a (net1, net2, shuffle) triple")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden_dims must be positive")
        return self

    def learning_rate(self, epoch):
        rate = self.lr_schedule[0][1]
        for start, r in self.lr_schedule:
            if epoch >= start:
                rate = r
        return rate

    def keep_ratio(self, epoch):
        return forget_rate_schedule(epoch, self.forget_rate or 0.0, self.forget_horizon)

    def stage(self, epoch):
        if epoch < self.epochs_warmup:
            return "warmup"
        if epoch < self.epochs_total - self.epochs_finetune:
            return "correction"
        return "finetune"


@dataclass(frozen=True)
class SelectionOutcome:
    kept_indices: np.ndarray
    keep_ratio: float
    losses: np.ndarray


def forget_rate_schedule(epoch, tau, T_k):
    """Keep ratio ramping linearly from 1 to ``1 - tau`` over ``T_k`` epochs."""
    if not 0.0 <= tau < 1.0:
        raise ValueError(f"forget rate must lie in [0, 1), got {tau}")
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return 1.0 - min(epoch / T_k, 1.0) * tau


def _num_kept(keep_ratio, n):
    # the tolerance stops 0.7 * 10 = 7.000000000000001 from rounding up to 8
    return max(1, min(n, math.ceil(keep_ratio * n - 1e-9)))


def select_small_loss(per_sample_losses, keep_ratio):
    losses = np.asarray(per_sample_losses, dtype=np.float64)
    order = np.argsort(losses, kind="stable")
    kept = np.sort(order[:_num_kept(keep_ratio, losses.shape[0])])
    return SelectionOutcome(kept, float(keep_ratio), losses)


@dataclass
class _BatchResult:
    breakdowns: tuple
    correct: tuple
    skipped: bool = False
    clamped: bool = False
    selections: tuple = ()


def _ce_breakdown(per_sample):
    value = float(per_sample.mean())
    return L.LossBreakdown(value, 0.0, 0.0, 0.0, value, per_sample)


def _ce_update(model, opt, rec, labels, rows, extra_grad=None):
    _, g_logits = L.cross_entropy(rec.logits[rows], labels[rows])
    grad = backward(model, rec.subset(rows), g_logits)
    if extra_grad is not None:
        grad += extra_grad
    adam_step(model, opt, grad)


def _check_finite(breakdowns, where):
    for k, b in enumerate(breakdowns, start=1):
        comps = {"l_c": b.l_c, "l_o": b.l_o, "l_e": b.l_e, "l_d": b.l_d, "total": b.total}
        if not all(math.isfinite(v) for v in comps.values()):
            raise NonFiniteLossError("non-finite loss", {**where, "network": k, **comps})


def _standard_batch(model, opt, x, y):
    rec = forward(model, x)
    per, g_logits = L.cross_entropy(rec.logits, y)
    adam_step(model, opt, backward(model, rec, g_logits))
    lb = _ce_breakdown(per)
    return _BatchResult((lb,), (int((rec.logits.argmax(1) == y).sum()),))


def _coteaching_batch(m1, m2, o1, o2, x, y, keep_ratio, mutual, co_reg=None):
    rec1, rec2 = forward(m1, x), forward(m2, x)
    per1, _ = L.cross_entropy(rec1.logits, y)
    per2, _ = L.cross_entropy(rec2.logits, y)
    sel1 = select_small_loss(per1, keep_ratio).kept_indices
    sel2 = select_small_loss(per2, keep_ratio).kept_indices
    rows1, rows2 = (sel2, sel1) if mutual else (sel1, sel2)
    g1 = g2 = None
    clamped = False
    if co_reg is not None:
        xi, mu = co_reg
        _, d1, d2, clamped = L.co_regularization_grads(m1.theta, m2.theta, mu)
        g1, g2 = xi * d1, xi * d2
    _ce_update(m1, o1, rec1, y, rows1, g1)
    _ce_update(m2, o2, rec2, y, rows2, g2)
    correct = (int((rec1.logits.argmax(1) == y).sum()), int((rec2.logits.argmax(1) == y).sum()))
    return _BatchResult((_ce_breakdown(per1), _ce_breakdown(per2)), correct, False, clamped,
                        (sel1, sel2))


def _coteaching_plus_batch(m1, m2, o1, o2, x, y, keep_ratio):
    rec1, rec2 = forward(m1, x), forward(m2, x)
    per1, _ = L.cross_entropy(rec1.logits, y)
    per2, _ = L.cross_entropy(rec2.logits, y)
    pred1, pred2 = rec1.logits.argmax(1), rec2.logits.argmax(1)
    correct = (int((pred1 == y).sum()), int((pred2 == y).sum()))
    breakdowns = (_ce_breakdown(per1), _ce_breakdown(per2))
    disagree = np.flatnonzero(pred1 != pred2)
    if disagree.size == 0:
        return _BatchResult(breakdowns, correct, skipped=True)
    sel1 = disagree[select_small_loss(per1[disagree], keep_ratio).kept_indices]
    sel2 = disagree[select_small_loss(per2[disagree], keep_ratio).kept_indices]
    _ce_update(m1, o1, rec1, y, sel2)
    _ce_update(m2, o2, rec2, y, sel1)
    return _BatchResult(breakdowns, correct, selections=(sel1, sel2))


def _stage_weights(weights, stage):
    if stage == "finetune":
        return replace(weights, alpha=0.0, beta=0.0)
    return weights


def _correction_logit_grad(probs, label_dist, rows, beta):
    p, yd = probs[rows], label_dist[rows]
    g = L.compat_grad_logits(p, yd)
    if beta:
        g = g + beta * L.entropy_loss(p)[1]
    return g


def _label_logit_grad(probs, label_dist, noisy_onehot, alpha):
    g = L.compat_grad_label_logits(probs, label_dist)
    if alpha:
        g = g + alpha * L.origin_grad_label_logits(noisy_onehot, label_dist)
    return g


def _mlc_batch(m1, m2, o1, o2, store, idx, x, y, keep_ratio, config, stage):
    w = config.weights
    if stage == "warmup" and config.warmup_plain_ce:
        co_reg = (w.xi, w.mu) if w.xi else None
        return _coteaching_batch(m1, m2, o1, o2, x, y, keep_ratio, True, co_reg)

    rec1, rec2 = forward(m1, x), forward(m2, x)
    yd = label_distribution(store, idx)
    onehot = one_hot(y, store.num_classes)
    stage_w = _stage_weights(w, stage)
    dist = float(np.linalg.norm(m1.theta - m2.theta))
    lb1 = L.total_loss(rec1.probs, yd, onehot, dist, stage_w)
    lb2 = L.total_loss(rec2.probs, yd, onehot, dist, stage_w)
    _check_finite((lb1, lb2), {"stage": stage})

    sel1 = select_small_loss(lb1.per_sample_lc, keep_ratio).kept_indices
    sel2 = select_small_loss(lb2.per_sample_lc, keep_ratio).kept_indices
    clamped = False
    reg1 = reg2 = None
    if w.xi:
        _, d1, d2, clamped = L.co_regularization_grads(m1.theta, m2.theta, w.mu)
        reg1, reg2 = w.xi * d1, w.xi * d2

    # network 1 learns from network 2's picks and vice versa
    for model, opt, rec, rows, reg in ((m1, o1, rec1, sel2, reg1), (m2, o2, rec2, sel1, reg2)):
        g_logits = _correction_logit_grad(rec.probs, yd, rows, stage_w.beta)
        grad = backward(model, rec.subset(rows), g_logits)
        if reg is not None:
            grad += reg
        adam_step(model, opt, grad)

    if stage == "correction":
        g1 = _label_logit_grad(rec1.probs, yd, onehot, w.alpha)
        g2 = _label_logit_grad(rec2.probs, yd, onehot, w.alpha)
        update_labels(store, idx, g1, g2)

    correct = (int((rec1.probs.argmax(1) == y).sum()), int((rec2.probs.argmax(1) == y).sum()))
    return _BatchResult((lb1, lb2), correct, False, clamped, (sel1, sel2))


def _pencil_batch(model, opt, store, idx, x, y, config, stage):
    if stage == "warmup" and config.warmup_plain_ce:
        return _standard_batch(model, opt, x, y)
    w = config.weights
    rec = forward(model, x)
    yd = label_distribution(store, idx)
    onehot = one_hot(y, store.num_classes)
    stage_w = replace(_stage_weights(w, stage), xi=0.0)
    lb = L.total_loss(rec.probs, yd, onehot, 1.0, stage_w)
    _check_finite((lb,), {"stage": stage})
    rows = np.arange(x.shape[0])
    adam_step(model, opt, backward(model, rec, _correction_logit_grad(rec.probs, yd, rows,
                                                                      stage_w.beta)))
    if stage == "correction":
        g = _label_logit_grad(rec.probs, yd, onehot, w.alpha)
        update_labels(store, idx, g, np.zeros_like(g))
    return _BatchResult((lb,), (int((rec.probs.argmax(1) == y).sum()),))


# Public single-step entry points -------------------------------------------------

def standard_step(model, optimizer, batch, noisy_labels):
    """One cross-entropy step; the cross-entropy is reported in the ``l_c`` slot."""
    return _standard_batch(model, optimizer, batch, np.asarray(noisy_labels)).breakdowns[0]


def coteaching_step(model1, model2, optimizers, batch, noisy_labels, keep_ratio, mutual=True):
    if model1.layer_dims != model2.layer_dims:
        raise ValueError("co-teaching needs structurally identical networks")
    o1, o2 = optimizers
    res = _coteaching_batch(model1, model2, o1, o2, batch, np.asarray(noisy_labels), keep_ratio,
                            mutual)
    return res.breakdowns


def coteaching_plus_step(model1, model2, optimizers, batch, noisy_labels, keep_ratio):
    """Cross-update on the disagreement subset; no parameters move when it is empty."""
    o1, o2 = optimizers
    res = _coteaching_plus_batch(model1, model2, o1, o2, batch, np.asarray(noisy_labels),
                                 keep_ratio)
    if res.skipped:
        log.debug("co-teaching+ step skipped: networks agree on every sample")
    return res.breakdowns


# Epoch and run loops ---------------------------------------------------------------

@dataclass
class _EpochAccumulator:
    n_nets: int
    seen: int = 0
    correct: list = field(default_factory=list)
    sums: dict = field(default_factory=dict)
    batches: int = 0
    clamp_events: int = 0
    skipped_steps: int = 0

    def __post_init__(self):
        self.correct = [0] * self.n_nets

    def add(self, res, batch_len):
        self.seen += batch_len
        for k, c in enumerate(res.correct):
            self.correct[k] += c
        for b in res.breakdowns:
            for name in ("l_c", "l_o", "l_e", "l_d"):
                self.sums[name] = self.sums.get(name, 0.0) + getattr(b, name) / len(res.breakdowns)
        self.batches += 1
        self.clamp_events += int(res.clamped)
        self.skipped_steps += int(res.skipped)

    def fill(self, record, loss_names):
        accs = [c / self.seen for c in self.correct] if self.seen else [None] * self.n_nets
        record.train_acc1 = accs[0]
        if self.n_nets == 2:
            record.train_acc2 = accs[1]
        for name in loss_names:
            if self.batches:
                setattr(record, name, self.sums[name] / self.batches)
        record.clamp_events = self.clamp_events
        record.skipped_steps = self.skipped_steps


def _loss_names(strategy):
    return ("l_c", "l_o", "l_e", "l_d") if strategy in CORRECTING_STRATEGIES else ("l_c",)


def _batches(rng, n, batch_size):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def train_epoch(state, epoch):
    """Run one training epoch in place and return a partially filled EpochRecord."""
    cfg = state.config
    for opt in state.optimizers:
        opt.lr = cfg.learning_rate(epoch)
    keep = cfg.keep_ratio(epoch)
    stage = cfg.stage(epoch)
    models, opts = state.models, state.optimizers
    acc = _EpochAccumulator(len(models))
    x_all, y_all = state.features, state.noisy_labels
    for idx in _batches(state.rng, x_all.shape[0], cfg.batch_size):
        x, y = x_all[idx], y_all[idx]
        s = cfg.strategy
        if s == "standard":
            res = _standard_batch(models[0], opts[0], x, y)
        elif s in ("coteaching", "coteaching_independent"):
            res = _coteaching_batch(*models, *opts, x, y, keep, s == "coteaching")
        elif s == "coteaching_plus":
            res = _coteaching_plus_batch(*models, *opts, x, y, keep)
        elif s == "mlc":
            res = _mlc_batch(*models, *opts, state.label_store, idx, x, y, keep, cfg, stage)
        else:
            res = _pencil_batch(models[0], opts[0], state.label_store, idx, x, y, cfg, stage)
        acc.add(res, idx.shape[0])
    record = EpochRecord(epoch + 1)
    acc.fill(record, _loss_names(cfg.strategy))
    return record


def mlc_epoch(model1, model2, optimizers, label_store, dataset, epoch, config, rng):
    """One epoch of mutual label correction over ``dataset`` (features, noisy labels)."""
    state = TrainState(config, dataset.features, dataset.labels, [model1, model2],
                       list(optimizers), label_store, rng)
    return train_epoch(state, epoch)


@dataclass
class TrainState:
    config: TrainConfig
    features: np.ndarray
    noisy_labels: np.ndarray
    models: list
    optimizers: list
    label_store: object
    rng: np.random.Generator


@dataclass
class RunResult:
    metrics: RunMetrics
    models: list
    label_store: object = None
    corrections: object = None


def evaluate(state, record, test):
    probs = [predict_proba(m, test.features, state.config.eval_batch_size) for m in state.models]
    accs = [accuracy(p.argmax(1), test.labels) for p in probs]
    record.test_acc1 = accs[0]
    if len(probs) == 2:
        record.test_acc2 = accs[1]
        record.divergence = L.divergence(probs[0], probs[1])
    return record


def init_state(config, train, noisy_labels):
    config.validate()
    dims = [train.dim, *config.hidden_dims, train.num_classes]
    n_nets = 2 if config.strategy in DUAL_STRATEGIES else 1
    models = [MlpModel.initialize(dims, config.seeds[k]) for k in range(n_nets)]
    lr0 = config.learning_rate(0)
    opts = [AdamState.for_model(m, lr=lr0) for m in models]
    store = None
    if config.strategy in CORRECTING_STRATEGIES:
        store = init_label_store(noisy_labels, train.num_classes, config.K, config.lambda_step)
    rng = np.random.default_rng(config.seeds[2])
    return TrainState(config, train.features, np.asarray(noisy_labels, dtype=np.int64), models,
                      opts, store, rng)


def run(config, train, test, record=None, on_epoch=None):
    """Train per ``config`` on ``train`` (with the noisy labels of ``record`` if given).

    ``on_epoch`` is called with every EpochRecord as soon as it is complete,
    starting with the untrained epoch-0 evaluation.
    """
    noisy = record.noisy_labels if record is not None else train.labels
    if len(noisy) != len(train):
        raise ValueError("corruption record length does not match the training set")
    state = init_state(config, train, noisy)
    metrics = RunMetrics()

    def emit(rec):
        metrics.append(rec)
        if on_epoch is not None:
            on_epoch(rec)

    emit(evaluate(state, EpochRecord(0), test))
    for epoch in range(config.epochs_total):
        rec = train_epoch(state, epoch)
        emit(evaluate(state, rec, test))
    corrections = None
    if state.label_store is not None and record is not None:
        corrections = export_corrected(state.label_store, record)
        metrics.extra["corrections"] = corrections.summary
    return RunResult(metrics, state.models, state.label_store, corrections)
