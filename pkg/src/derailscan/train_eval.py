"""Corpus split, training loop, and the confusion-matrix metric suite.

Training consumes one graph per optimizer step. Features are re-derived
from the model's current embedding matrix every step (the matrix is a
trained parameter), so the dataset's stored feature block is never read
here; only tokens, edges, boundaries, and labels are.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .embed_normalize import NormalizedDataset, normalize_features, subset_dataset
from .errors import InputError
from .gcn_engine import (
    ForwardResult,
    GcnModel,
    backward,
    forward,
    init_state,
    loss,
    normalized_adjacency,
    optimizer_step,
)


class TooFewGraphs(InputError):
    pass


class UnlabeledDataset(InputError):
    pass


class VocabularyMismatch(InputError):
    pass


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise TooFewGraphs(
                f"train fraction must lie in (0, 1), got {self.train_fraction}"
            )


@dataclass
class EvalMetrics:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    recall: float
    precision: float
    f1: float
    fpr: float
    flags: list[str] = field(default_factory=list)


def metrics_from_counts(tp: int, fp: int, tn: int, fn: int) -> EvalMetrics:
    """Standard confusion-matrix metrics; zero denominators yield 0, flagged."""
    flags: list[str] = []

    def ratio(num: int, den: int, name: str) -> float:
        if den == 0:
            flags.append(f"{name}_zero_division")
            return 0.0
        return num / den

    acc = ratio(tp + tn, tp + tn + fp + fn, "acc")
    recall = ratio(tp, tp + fn, "recall")
    precision = ratio(tp, tp + fp, "precision")
    if precision + recall == 0.0:
        flags.append("f1_zero_division")
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    fpr = ratio(fp, fp + tn, "fpr")
    return EvalMetrics(
        tp=tp, fp=fp, tn=tn, fn=fn,
        acc=acc, recall=recall, precision=precision, f1=f1, fpr=fpr,
        flags=flags,
    )


def split(
    dataset: NormalizedDataset, spec: SplitSpec
) -> tuple[NormalizedDataset, NormalizedDataset]:
    """Seeded shuffle, then cut. Stratified keeps class ratios within one.

    The train side gets round(n * fraction) graphs overall; under
    stratification each class contributes floor(n_c * fraction) with the
    remaining slots going to the classes with the largest fractional
    remainders (ties to the lower class id).
    """
    n = dataset.num_graphs
    if n < 2:
        raise TooFewGraphs(f"need at least 2 graphs to split, have {n}")
    labels = dataset.graph_labels
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    k = min(max(math.floor(n * spec.train_fraction + 0.5), 1), n - 1)

    if spec.stratified:
        if (labels < 0).any():
            raise UnlabeledDataset("stratified split requires labeled graphs")
        classes = sorted(set(int(c) for c in labels))
        if len(classes) < 2:
            raise TooFewGraphs("stratified split requires both classes present")
        by_class = {c: [int(i) for i in perm if labels[i] == c] for c in classes}
        take = {c: math.floor(len(by_class[c]) * spec.train_fraction) for c in classes}
        remainders = sorted(
            classes,
            key=lambda c: (-(len(by_class[c]) * spec.train_fraction - take[c]), c),
        )
        extras = k - sum(take.values())
        while extras > 0:
            progressed = False
            for c in remainders:
                if extras == 0:
                    break
                if take[c] < len(by_class[c]):
                    take[c] += 1
                    extras -= 1
                    progressed = True
            if not progressed:
                break
        train_idx = sorted(i for c in classes for i in by_class[c][: take[c]])
    else:
        train_idx = sorted(int(i) for i in perm[:k])

    val_idx = sorted(set(range(n)) - set(train_idx))
    if not train_idx or not val_idx:
        raise TooFewGraphs("split produced an empty side")
    return subset_dataset(dataset, train_idx), subset_dataset(dataset, val_idx)


@dataclass
class _GraphBatch:
    n: int
    norm_adj: np.ndarray
    token_idx: np.ndarray
    label: int


def _prepare_batches(model: GcnModel, dataset: NormalizedDataset) -> list[_GraphBatch]:
    if dataset.name_buckets != model.config.name_buckets:
        raise VocabularyMismatch(
            f"dataset tokens use {dataset.name_buckets} name buckets, "
            f"model expects {model.config.name_buckets}"
        )
    batches: list[_GraphBatch] = []
    for g in range(dataset.num_graphs):
        start, end = dataset.graph_rows(g)
        n = end - start
        edges = dataset.graph_edges(g)
        idx = np.asarray(
            [model.vocab.index_of(t) for t in dataset.node_labels[start:end]],
            dtype=np.int64,
        )
        batches.append(
            _GraphBatch(
                n=n,
                norm_adj=normalized_adjacency(edges, n),
                token_idx=idx,
                label=int(dataset.graph_labels[g]),
            )
        )
    return batches


def _forward_batch(model: GcnModel, batch: _GraphBatch) -> ForwardResult:
    raw = model.embedding[:, batch.token_idx].T
    feats = normalize_features(raw)
    return forward(model, feats, batch.norm_adj, [(0, batch.n)])


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    metrics: EvalMetrics


def _require_labels(dataset: NormalizedDataset, where: str) -> None:
    if dataset.num_graphs == 0:
        raise TooFewGraphs(f"{where} set is empty")
    if (dataset.graph_labels < 0).any():
        raise UnlabeledDataset(f"{where} set contains unlabeled graphs")


def train(
    model: GcnModel,
    train_set: NormalizedDataset,
    val_set: NormalizedDataset,
    epochs: int,
    patience: int = 10,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
    warmup_steps: int = 50,
    threshold: float = 0.5,
) -> tuple[GcnModel, list[EpochRecord]]:
    """Optimize on train_set, track val_set, return the best-F1 snapshot.

    One graph per step, order reshuffled each epoch from the model seed.
    Ties on validation F1 refresh the snapshot, so the latest equally good
    epoch wins; on a saturated validation set this keeps the better-fitted
    later parameters instead of freezing the first epoch that peaked.
    Stops early after ``patience`` consecutive epochs without a strict
    validation F1 improvement. ``epochs=0`` returns the input model
    untouched.
    """
    _require_labels(train_set, "train")
    _require_labels(val_set, "validation")
    if epochs < 0:
        raise TooFewGraphs(f"epoch count must be non-negative, got {epochs}")
    if epochs == 0:
        return model, []

    train_batches = _prepare_batches(model, train_set)
    val_batches = _prepare_batches(model, val_set)
    params = model.parameters()
    state = init_state(
        params,
        learning_rate=learning_rate,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
        warmup_steps=warmup_steps,
    )
    rng = np.random.default_rng(model.config.seed)
    best = model.clone()
    best_f1 = -1.0
    stale = 0
    history: list[EpochRecord] = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_batches))
        step_losses = []
        for b_idx in order:
            batch = train_batches[b_idx]
            fwd = _forward_batch(model, batch)
            step_losses.append(loss(fwd.probs, [batch.label]))
            grads = backward(
                model,
                batch.norm_adj,
                [(0, batch.n)],
                [batch.label],
                fwd,
                token_indices=None
                if model.config.freeze_embedding
                else batch.token_idx,
            )
            optimizer_step(state, params, grads.as_list())
        val_losses = []
        counts = [0, 0, 0, 0]  # tp, fp, tn, fn
        for batch in val_batches:
            fwd = _forward_batch(model, batch)
            val_losses.append(loss(fwd.probs, [batch.label]))
            _tally(counts, float(fwd.probs[0, 1]), batch.label, threshold)
        metrics = metrics_from_counts(*counts)
        history.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(step_losses)),
                val_loss=float(np.mean(val_losses)),
                metrics=metrics,
            )
        )
        improved = metrics.f1 > best_f1
        if metrics.f1 >= best_f1:
            best_f1 = metrics.f1
            best = model.clone()
        if improved:
            stale = 0
        else:
            stale += 1
            if stale >= patience:
                break
    return best, history


def _tally(counts: list[int], p1: float, label: int, threshold: float) -> None:
    pred = 1 if p1 >= threshold else 0
    if pred == 1 and label == 1:
        counts[0] += 1
    elif pred == 1 and label == 0:
        counts[1] += 1
    elif pred == 0 and label == 0:
        counts[2] += 1
    else:
        counts[3] += 1


def predict_probabilities(model: GcnModel, dataset: NormalizedDataset) -> np.ndarray:
    """Class-1 probability per graph, from the model's own embedding."""
    batches = _prepare_batches(model, dataset)
    return np.asarray(
        [float(_forward_batch(model, b).probs[0, 1]) for b in batches]
    )


def forward_graph(
    model: GcnModel, dataset: NormalizedDataset, g: int
) -> tuple[ForwardResult, tuple[int, int]]:
    """Full forward result for one graph, plus its global row range."""
    batches = _prepare_batches(model, subset_dataset(dataset, [g]))
    return _forward_batch(model, batches[0]), dataset.graph_rows(g)


def evaluate(
    model: GcnModel, dataset: NormalizedDataset, threshold: float = 0.5
) -> EvalMetrics:
    """Threshold class-1 probabilities and count one verdict per graph."""
    _require_labels(dataset, "evaluation")
    probs = predict_probabilities(model, dataset)
    counts = [0, 0, 0, 0]
    for p1, label in zip(probs, dataset.graph_labels):
        _tally(counts, float(p1), int(label), threshold)
    return metrics_from_counts(*counts)


def history_table(history: Sequence[EpochRecord]) -> str:
    """History as a tab-separated table, one row per epoch."""
    lines = ["epoch\ttrain_loss\tval_loss\tacc\trecall\tprecision\tf1\tfpr"]
    for rec in history:
        m = rec.metrics
        lines.append(
            f"{rec.epoch}\t{rec.train_loss:.6f}\t{rec.val_loss:.6f}"
            f"\t{m.acc:.6f}\t{m.recall:.6f}\t{m.precision:.6f}"
            f"\t{m.f1:.6f}\t{m.fpr:.6f}"
        )
    return "\n".join(lines) + "\n"
