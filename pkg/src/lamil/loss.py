"""Frequency-weighted multi-target binary cross-entropy on logits.

The per-target weight w_t = n_neg / n_pos, computed on the training fold
only, rebalances rare positives so every target contributes comparably.  By
default the weight multiplies the whole per-target BCE term (both the
positive and negative parts), exactly as the loss is defined here; the
"positive" weighting mode applies it to the positive term alone for users
who prefer the common pos_weight convention.

A label byte of 255 marks a missing target: it is excluded from weight
counts, contributes nothing to the loss, and the mean runs over the
non-missing target count.
"""

from __future__ import annotations

import numpy as np

from .tensor import log_sigmoid, sigmoid

MISSING = 255

WEIGHTING_MODES = ("both", "positive")


def pos_weights(labels: np.ndarray) -> np.ndarray:
    """Per-target weights n_neg/n_pos from a (bags, T) label table.

    Missing labels (255) are excluded from the counts.  Every target must
    have at least one positive and one negative among the non-missing rows.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"label table must be 2-d, got shape {labels.shape}")
    weights = np.empty(labels.shape[1], dtype=np.float64)
    for t in range(labels.shape[1]):
        col = labels[:, t]
        known = col != MISSING
        pos = int(np.count_nonzero(col[known] == 1))
        neg = int(np.count_nonzero(col[known] == 0))
        if pos == 0 or neg == 0:
            raise ValueError(
                f"target {t} has {pos} positives and {neg} negatives; "
                "weights need at least one of each"
            )
        weights[t] = neg / pos
    return weights


def _checked(logits, labels, weights):
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    weights = np.asarray(weights, dtype=np.float64)
    if not (logits.shape == labels.shape == weights.shape) or logits.ndim != 1:
        raise ValueError(
            f"length mismatch: logits {logits.shape}, labels {labels.shape}, "
            f"weights {weights.shape}"
        )
    known = labels != MISSING
    if not known.any():
        raise ValueError("all targets are missing; loss undefined")
    bad = known & (labels != 0) & (labels != 1)
    if bad.any():
        t = int(np.flatnonzero(bad)[0])
        raise ValueError(f"label for target {t} is {labels[t]}, expected 0, 1, or 255")
    return logits, labels, weights, known


def weighted_bce(
    logits: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    weighting: str = "both",
) -> float:
    """L = -(1/T') sum_t w_t [y_t log s(x_t) + (1-y_t) log(1-s(x_t))].

    T' counts the non-missing targets.  Log terms go through the stable
    log-sigmoid form, so extreme logits stay finite.
    """
    if weighting not in WEIGHTING_MODES:
        raise ValueError(f"weighting must be one of {WEIGHTING_MODES}, got {weighting!r}")
    logits, labels, weights, known = _checked(logits, labels, weights)
    x = logits[known]
    y = labels[known].astype(np.float64)
    w = weights[known]
    pos_term = y * log_sigmoid(x)
    neg_term = (1.0 - y) * log_sigmoid(-x)
    if weighting == "both":
        per_target = w * (pos_term + neg_term)
    else:
        per_target = w * pos_term + neg_term
    return float(-per_target.sum() / known.sum())


def loss_grad(
    logits: np.ndarray,
    labels: np.ndarray,
    weights: np.ndarray,
    weighting: str = "both",
) -> np.ndarray:
    """dL/dx_t; exactly 0 for missing targets."""
    if weighting not in WEIGHTING_MODES:
        raise ValueError(f"weighting must be one of {WEIGHTING_MODES}, got {weighting!r}")
    logits, labels, weights, known = _checked(logits, labels, weights)
    grad = np.zeros_like(logits)
    x = logits[known]
    y = labels[known].astype(np.float64)
    w = weights[known]
    s = sigmoid(x)
    if weighting == "both":
        g = w * (s - y)
    else:
        g = (1.0 - y) * s - w * y * (1.0 - s)
    grad[known] = g / known.sum()
    return grad
