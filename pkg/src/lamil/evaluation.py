"""Per-target AUROC and patient-disjoint cross-validation.

AUROC uses the rank form of the Mann-Whitney U statistic with midranks for
ties, which matches pairwise concordance counting exactly: both routes
build the same sum of halves (exact in f64) and perform one division.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Dataset, stratified_kfold
from .loss import MISSING, pos_weights
from .model import ModelConfig, forward, init_params
from .optim import OptimState
from .rng import derive_stream
from .train import bag_graphs, train_model


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing the mean of their rank range."""
    order = np.argsort(x, kind="stable")
    sx = x[order]
    ranks = np.empty(x.shape[0])
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve; ties count half.

    Needs at least one positive and one negative label, otherwise the
    value is undefined and a ValueError is raised.
    """
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if scores.shape[0] != labels.shape[0]:
        raise ValueError(
            f"{scores.shape[0]} scores but {labels.shape[0]} labels"
        )
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int((labels == 1).sum())
    n_neg = labels.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            f"auroc undefined with {n_pos} positives and {n_neg} negatives"
        )
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class CvReport:
    """AUROC per (fold, target), NaN where a fold had a single class."""

    target_names: list[str]
    table: np.ndarray  # (folds, targets)

    def mean_auroc(self) -> np.ndarray:
        """Per-target mean over the folds that had both classes."""
        return np.array([_safe_mean(col) for col in self.table.T])

    def to_csv(self) -> str:
        lines = ["fold,target,auroc"]
        for f in range(self.table.shape[0]):
            for t, name in enumerate(self.target_names):
                lines.append(f"{f},{name},{_cell(self.table[f, t])}")
        for t, name in enumerate(self.target_names):
            col = self.table[:, t]
            lines.append(f"mean,{name},{_cell(_safe_mean(col))}")
            lines.append(f"std,{name},{_cell(_safe_std(col))}")
        return "\n".join(lines) + "\n"


def _cell(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.4f}"


def _safe_mean(col: np.ndarray) -> float:
    valid = col[~np.isnan(col)]
    return float(valid.mean()) if valid.size else float("nan")


def _safe_std(col: np.ndarray) -> float:
    valid = col[~np.isnan(col)]
    # Sample standard deviation; undefined below two folds.
    return float(valid.std(ddof=1)) if valid.size >= 2 else float("nan")


def _subseed(seed: int, *labels) -> int:
    return derive_stream(seed, *labels).next_u64()


def cross_validate(
    dataset: Dataset,
    config: ModelConfig,
    *,
    folds: int = 5,
    epochs: int = 10,
    lr: float = 2e-5,
    weight_decay: float = 2e-5,
    seed: int = 1,
    weighting: str = "both",
    assignment: np.ndarray | None = None,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    lookahead_alpha: float = 0.5,
    lookahead_k: int = 5,
) -> CvReport:
    """Stratified patient-disjoint k-fold CV; returns per-fold AUROCs.

    Each fold trains a fresh model on the other folds, with class weights
    recomputed from that training split only.  A validation target with a
    single class gets a NaN cell and a warning instead of a score.
    """
    if assignment is None:
        assignment = stratified_kfold(dataset, folds, seed)
    else:
        assignment = np.asarray(assignment)
        if assignment.shape[0] != len(dataset.bags):
            raise ValueError(
                f"assignment covers {assignment.shape[0]} bags, "
                f"dataset has {len(dataset.bags)}"
            )
        folds = int(assignment.max()) + 1

    graphs = [bag_graphs(bag, config) for bag in dataset.bags]
    t_count = len(dataset.target_names)
    table = np.full((folds, t_count), np.nan)
    label_table = dataset.label_table()

    for f in range(folds):
        train_idx = np.flatnonzero(assignment != f)
        val_idx = np.flatnonzero(assignment == f)
        if train_idx.size == 0 or val_idx.size == 0:
            raise ValueError(f"fold {f} leaves an empty train or validation set")
        class_weights = pos_weights(label_table[train_idx])

        params = init_params(config, _subseed(seed, "fold", f, "init"))
        state = OptimState.create(
            params.flat,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
            lookahead_alpha=lookahead_alpha,
            lookahead_k=lookahead_k,
        )
        train_model(
            [dataset.bags[i] for i in train_idx],
            [graphs[i] for i in train_idx],
            class_weights,
            params,
            config,
            state,
            epochs=epochs,
            seed=_subseed(seed, "fold", f, "train"),
            weighting=weighting,
        )

        scores = np.empty((val_idx.size, t_count))
        for row, i in enumerate(val_idx):
            bag = dataset.bags[i]
            scores[row] = forward(bag.features, graphs[i], params, config).probabilities
        for t in range(t_count):
            y = label_table[val_idx, t]
            known = y != MISSING
            kn = y[known]
            if kn.size == 0 or (kn == 1).all() or (kn == 0).all():
                warnings.warn(
                    f"fold {f} target {dataset.target_names[t]} has a single "
                    f"class; auroc is undefined",
                    stacklevel=2,
                )
                continue
            table[f, t] = auroc(scores[known, t], kn)
    return CvReport(target_names=dataset.target_names, table=table)
