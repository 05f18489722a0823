"""Head training: seeded Adam over the combined task loss, dev-selected checkpoint.

The learning rate comes from the fixed {1e-4, 5e-4} grid, batch size defaults
to 32, and the epoch checkpoint with the best dev metric (macro F1 for
classification tasks, concordance for regressions; mean across tasks) is the
one returned.  Plain gradient steps at this lr grid move the zero-init output
layers far too slowly to converge within 10 epochs, so the stochastic
gradient method is Adam with the usual (0.9, 0.999) moments.  Everything is
keyed off the spec seed, so two runs with the same inputs produce
bit-identical weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import taxonomy
from ..errors import DomainError, TrainingError
from .losses import ccc, ccc_loss, ccc_loss_grad, kl_loss, multilabel_loss, sigmoid, softmax
from .model import (
    LOSS_CCC,
    LOSS_KL,
    HeadConfig,
    HeadWeights,
    MultitaskSpec,
    backward_sample,
    forward_sample,
    init_weights,
    zero_grads,
)

ALLOWED_LRS = (1e-4, 5e-4)


@dataclass(frozen=True)
class Hyper:
    lr: float = 5e-4
    epochs: int = 10
    batch_size: int = 32

    def __post_init__(self):
        if not any(np.isclose(self.lr, v) for v in ALLOWED_LRS):
            raise DomainError(f"lr must be one of {ALLOWED_LRS}, got {self.lr}")
        if self.epochs < 1 or self.batch_size < 1:
            raise DomainError("epochs and batch_size must be >= 1")


@dataclass
class TrainResult:
    weights: HeadWeights
    log: list[dict] = field(default_factory=list)
    best_epoch: int = -1


def _param_grad_pairs(weights: HeadWeights, grads: dict):
    yield weights.layer_logits, grads["layer_logits"]
    for (w, b), (gw, gb) in zip(weights.conv, grads["conv"]):
        yield w, gw
        yield b, gb
    for trait in weights.heads:
        for (w, b), (gw, gb) in zip(weights.heads[trait], grads["heads"][trait]):
            yield w, gw
            yield b, gb


class _Adam:
    """Per-parameter adaptive steps; state kept in float64 for determinism."""

    def __init__(self, weights: HeadWeights, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros(p.shape) for p, _ in _param_grad_pairs(weights, zero_grads(weights))]
        self.v = [np.zeros(p.shape) for p, _ in _param_grad_pairs(weights, zero_grads(weights))]

    def step(self, weights: HeadWeights, grads: dict):
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(_param_grad_pairs(weights, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            p -= update.astype(p.dtype)


def _stack_for_record(record, backend) -> np.ndarray:
    if backend.requires_audio:
        from ..ingest import preprocess_file  # deferred: ingest pulls in scipy.signal

        waveform = preprocess_file(record.audio_path)
        stack = backend.encode(record.id, waveform, 16000)
    else:
        stack = backend.encode(record.id, None, duration_s=record.duration_s)
    return np.asarray(stack.values, dtype=np.float64)


def _target_for(record, task) -> np.ndarray:
    trait = task.trait
    if task.loss == LOSS_CCC:
        if trait == "age":
            if record.age_years is None:
                raise DomainError(f"record {record.id!r} lacks age_years needed for age training")
            return np.array([record.age_years / 100.0])
        value = record.labels.get(trait)
        if not isinstance(value, (int, float)):
            raise DomainError(f"record {record.id!r} lacks a scalar label for {trait!r}")
        return np.array([float(value)])
    labels = taxonomy.default_taxonomy().labels(trait)
    if task.loss == LOSS_KL:
        if trait == "emotion_categorical" and record.emotion_distribution:
            vec = np.array([record.emotion_distribution.get(lbl, 0.0) for lbl in labels])
            return vec
        got = record.labels.get(trait)
        if not got:
            raise DomainError(f"record {record.id!r} lacks a label for {trait!r}")
        vec = np.zeros(len(labels))
        vec[labels.index(got[0])] = 1.0
        return vec
    # multilabel: absent annotation means no positive labels
    vec = np.zeros(len(labels))
    for lbl in record.labels.get(trait, []):
        vec[labels.index(lbl)] = 1.0
    return vec


def _batch_pass(weights, stacks, targets, idx, spec, optimizer=None):
    """Forward (and, with an optimizer, backward+update) one batch; returns combined loss."""
    update = optimizer is not None
    batch = list(idx)
    caches = []
    scores = {t.trait: [] for t in spec.tasks}
    for i in batch:
        s, cache = forward_sample(stacks[i], weights)
        caches.append(cache)
        for trait, val in s.items():
            if not np.isfinite(val).all():
                raise TrainingError(f"non-finite scores for trait {trait!r}")
            scores[trait].append(val)
    total = 0.0
    dscores = [{} for _ in batch]
    n = len(batch)
    for task in spec.tasks:
        t_scores = scores[task.trait]
        t_targets = [targets[task.trait][i] for i in batch]
        if task.loss == LOSS_CCC:
            raw = np.array([s[0] for s in t_scores])
            preds = sigmoid(raw)
            tvec = np.array([t[0] for t in t_targets])
            total += task.weight * ccc_loss(preds, tvec)
            if update:
                g = ccc_loss_grad(preds, tvec) * preds * (1.0 - preds)
                for j in range(n):
                    dscores[j][task.trait] = task.weight * np.array([g[j]])
        elif task.loss == LOSS_KL:
            vals = 0.0
            for j in range(n):
                p = softmax(t_scores[j])
                vals += kl_loss(p, t_targets[j])
                if update:
                    dscores[j][task.trait] = task.weight * (p - t_targets[j]) / n
            total += task.weight * vals / n
        else:
            vals = 0.0
            for j in range(n):
                s = t_scores[j]
                vals += multilabel_loss(s, t_targets[j])
                if update:
                    dscores[j][task.trait] = (
                        task.weight * (sigmoid(s) - t_targets[j]) / (s.size * n)
                    )
            total += task.weight * vals / n
    if update:
        grads = zero_grads(weights)
        for j in range(n):
            backward_sample(dscores[j], caches[j], weights, grads)
        optimizer.step(weights, grads)
    return total


def _dev_metric(weights, stacks, targets, dev_idx, spec) -> float:
    from ..evalapps import macro_f1_arrays, macro_f1_binary

    per_task = []
    preds_by_trait = {t.trait: [] for t in spec.tasks}
    for i in dev_idx:
        s, _ = forward_sample(stacks[i], weights)
        for trait, val in s.items():
            preds_by_trait[trait].append(val)
    for task in spec.tasks:
        scores = preds_by_trait[task.trait]
        tgts = [targets[task.trait][i] for i in dev_idx]
        if task.loss == LOSS_CCC:
            preds = sigmoid(np.array([s[0] for s in scores]))
            per_task.append(ccc(preds, np.array([t[0] for t in tgts])))
        elif task.loss == LOSS_KL:
            true_idx = np.array([int(np.argmax(t)) for t in tgts])
            pred_idx = np.array([int(np.argmax(s)) for s in scores])
            per_task.append(macro_f1_arrays(true_idx, pred_idx, task.output_arity))
        else:
            true_bin = np.array(tgts) > 0.5
            pred_bin = np.array([sigmoid(s) for s in scores]) > 0.5
            per_task.append(macro_f1_binary(true_bin, pred_bin))
    return float(np.mean(per_task))


def train_head(records, backend, config, hyper: Hyper | None = None) -> TrainResult:
    """Train one head on the train split, selecting the best-dev-metric epoch.

    ``records`` must carry train and dev splits; ``config`` is a HeadConfig
    or MultitaskSpec whose layers/dims match the backend's descriptor.
    """
    hyper = hyper or Hyper()
    spec: MultitaskSpec = config.as_multitask() if isinstance(config, HeadConfig) else config
    train_recs = [r for r in records if r.split == "train"]
    dev_recs = [r for r in records if r.split == "dev"]
    if len(train_recs) < 2:
        raise DomainError(f"train split has {len(train_recs)} records, need >= 2")
    if not dev_recs:
        raise DomainError("dev split is empty")

    all_recs = train_recs + dev_recs
    stacks = [_stack_for_record(r, backend) for r in all_recs]
    targets = {
        task.trait: [_target_for(r, task) for r in all_recs] for task in spec.tasks
    }
    train_idx = list(range(len(train_recs)))
    dev_idx = list(range(len(train_recs), len(all_recs)))

    weights = init_weights(spec)
    optimizer = _Adam(weights, hyper.lr)
    rng = np.random.default_rng(spec.seed)
    log: list[dict] = []
    best: HeadWeights | None = None
    best_metric = -np.inf
    best_epoch = -1
    last_finite = weights.copy()

    for epoch in range(hyper.epochs):
        perm = rng.permutation(len(train_idx))
        losses = []
        try:
            for start in range(0, len(perm), hyper.batch_size):
                batch = [train_idx[k] for k in perm[start : start + hyper.batch_size]]
                if len(batch) < 2:
                    continue  # concordance needs >= 2 samples; drop the stray tail record
                losses.append(_batch_pass(weights, stacks, targets, batch, spec, optimizer))
        except TrainingError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}", last_state=last_finite) from exc
        train_loss = float(np.mean(losses)) if losses else float("nan")
        if not np.isfinite(train_loss):
            raise TrainingError(
                f"non-finite training loss at epoch {epoch}", last_state=last_finite
            )
        metric = _dev_metric(weights, stacks, targets, dev_idx, spec)
        log.append({"epoch": epoch, "train_loss": train_loss, "dev_metric": metric})
        if metric > best_metric:
            best_metric = metric
            best = weights.copy()
            best_epoch = epoch
        last_finite = weights.copy()

    assert best is not None
    return TrainResult(weights=best, log=log, best_epoch=best_epoch)
