"""Metrics, repeated-run protocols and sweeps."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .graphdata import AttackSpec, EdgeSplit, Graph, rand_attack, split_edges
from .model import classify_nodes
from .training import TrainingConfig, TrainState, score_pairs, train

log = logging.getLogger(__name__)

TASKS = ("link_prediction", "node_classification")


class MetricError(ValueError):
    pass


def roc_auc(scores, labels) -> float:
    """P(random positive outscores random negative), ties counted half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricError("scores and labels must be 1-d arrays of equal length")
    if not np.isin(labels, (0, 1)).all():
        raise MetricError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes")
    ranks = rankdata(scores)  # average ranks give ties half credit
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def f1_scores(pred, truth) -> tuple[float, float]:
    """``(micro, macro)`` F1 over the union of predicted and true classes."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise MetricError("pred and truth differ in length")
    if not len(truth):
        raise MetricError("empty label arrays")
    classes = np.union1d(pred, truth)
    per_class = []
    for c in classes:
        tp = np.sum((pred == c) & (truth == c))
        fp = np.sum((pred == c) & (truth != c))
        fn = np.sum((pred != c) & (truth == c))
        per_class.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    micro = float(np.mean(pred == truth))  # pooled precision = recall = accuracy
    return micro, float(np.mean(per_class))


@dataclass
class MetricsReport:
    task: str
    auc: float | None = None
    micro_f1: float | None = None
    macro_f1: float | None = None
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    runtime_s: float = 0.0
    global_kappa: float | None = None
    config_hash: str = ""
    runs: list[dict[str, float]] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise MetricError(f"unknown task {self.task!r}")

    @classmethod
    def aggregate(cls, task: str, runs: list[dict[str, float]], runtime_s: float, kappas: Sequence[float],
                  config_hash: str, **extra) -> "MetricsReport":
        keys = ("auc",) if task == "link_prediction" else ("micro_f1", "macro_f1")
        mean = {k: float(np.mean([r[k] for r in runs])) for k in keys}
        std = {k: float(np.std([r[k] for r in runs])) for k in keys}
        return cls(task, *(mean.get(k) for k in ("auc", "micro_f1", "macro_f1")), mean=mean, std=std,
                   runtime_s=runtime_s, global_kappa=float(np.mean(kappas)) if len(kappas) else None,
                   config_hash=config_hash, runs=runs, extra=extra)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary(self) -> str:
        parts = [f"{k}={100 * self.mean[k]:.2f}±{100 * self.std[k]:.2f}%" for k in self.mean]
        kappa = "" if self.global_kappa is None else f" kappa={self.global_kappa:.4g}"
        return f"{self.task}: {' '.join(parts)} over {len(self.runs)} run(s){kappa} ({self.runtime_s:.1f}s)"


def evaluate_split(state: TrainState, split: EdgeSplit) -> float:
    pos, neg = score_pairs(state, split.test_pos), score_pairs(state, split.test_neg)
    return roc_auc(np.concatenate([pos, neg]), np.r_[np.ones(len(pos)), np.zeros(len(neg))])


def _seeded(config: TrainingConfig, seed: int) -> TrainingConfig:
    return dataclasses.replace(config, seed=seed)


def run_link_prediction(graph: Graph, config: TrainingConfig, n_runs: int = 5,
                        test_ratio: float = 0.5) -> MetricsReport:
    """Split, train and score held-out pairs ``n_runs`` times with seeds ``config.seed + r``."""
    t0 = time.perf_counter()
    runs, kappas = [], []
    for r in range(n_runs):
        seed = config.seed + r
        split = split_edges(graph, test_ratio, seed)
        state = train(split.train, _seeded(config, seed))
        runs.append({"seed": seed, "auc": evaluate_split(state, split)})
        kappas.append(state.kappa)
        log.info("link prediction run %d: auc=%.4f", r, runs[-1]["auc"])
    return MetricsReport.aggregate("link_prediction", runs, time.perf_counter() - t0, kappas,
                                   config.config_hash(), test_ratio=test_ratio)


def run_robustness_sweep(graph: Graph, config: TrainingConfig,
                         ratios: Sequence[float] = (0.05, 0.10, 0.15, 0.20, 0.25), mode: str = "remove",
                         test_ratio: float = 0.1, n_runs: int = 1) -> list[MetricsReport]:
    """Attack the training graph at each ratio and score one shared clean test split.

    Ratio 0 trains on the unattacked training graph. Added edges never
    coincide with held-out pairs.
    """
    ratios = sorted(ratios)
    reports = []
    splits = [split_edges(graph, test_ratio, config.seed + r) for r in range(n_runs)]
    for ratio in ratios:
        t0 = time.perf_counter()
        runs, kappas = [], []
        for r, split in enumerate(splits):
            seed = config.seed + r
            g = split.train
            if ratio > 0:
                held = np.concatenate([split.test_pos, split.test_neg])
                g = rand_attack(g, AttackSpec(mode, ratio, seed), exclude=held)
            state = train(g, _seeded(config, seed))
            runs.append({"seed": seed, "auc": evaluate_split(state, split)})
            kappas.append(state.kappa)
        reports.append(MetricsReport.aggregate("link_prediction", runs, time.perf_counter() - t0, kappas,
                                               config.config_hash(), attack_mode=mode, attack_ratio=ratio,
                                               test_ratio=test_ratio))
        log.info("robustness %s %.2f: %s", mode, ratio, reports[-1].summary())
    return reports


def run_generalization_sweep(graph: Graph, config: TrainingConfig,
                             train_ratios: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                             n_runs: int = 1) -> list[MetricsReport]:
    reports = []
    for tr in sorted(train_ratios):
        rep = run_link_prediction(graph, config, n_runs, test_ratio=round(1 - tr, 10))
        rep.extra["train_ratio"] = tr
        reports.append(rep)
    return reports


def stratified_node_split(labels, train_frac: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    train = []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        train.append(idx[: max(1, int(round(train_frac * len(idx))))])
    train = np.sort(np.concatenate(train))
    return train, np.setdiff1d(np.arange(len(labels)), train)


def run_node_classification(graph: Graph, config: TrainingConfig, labels=None, n_runs: int = 5,
                            train_frac: float = 0.5, l2: float = 1.0) -> MetricsReport:
    """Joint objective (labelled cross-entropy plus link objective), then logistic regression
    on tangent features at the origin."""
    labels = graph.labels if labels is None else labels
    if labels is None:
        raise MetricError("node classification needs labels")
    labels = np.asarray(labels)
    labelled = np.flatnonzero(labels >= 0) if labels.dtype.kind in "iu" else np.arange(len(labels))
    classes, y_lab = np.unique(labels[labelled], return_inverse=True)
    y = np.full(len(labels), -1, dtype=np.int64)
    y[labelled] = y_lab
    t0 = time.perf_counter()
    runs, kappas = [], []
    for r in range(n_runs):
        seed = config.seed + r
        tr, te = stratified_node_split(y_lab, train_frac, np.random.default_rng(seed))
        tr, te = labelled[tr], labelled[te]
        state = train(graph, _seeded(config, seed), labels=y, train_idx=tr)
        pred, _ = classify_nodes(state.disc.points.detach(), y, tr, te, state.kappa, l2)
        micro, macro = f1_scores(pred, y[te])
        runs.append({"seed": seed, "micro_f1": micro, "macro_f1": macro})
        kappas.append(state.kappa)
    return MetricsReport.aggregate("node_classification", runs, time.perf_counter() - t0, kappas,
                                   config.config_hash(), train_frac=train_frac, n_classes=len(classes))
