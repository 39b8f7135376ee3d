"""Single-bag SGD loop: AdamW with the Lookahead wrapper, one bag per step.

Bag order is reshuffled every epoch from a stream derived off the run seed
and the epoch index, so a run is reproducible from (params seed, run seed)
alone.  After the last step the slow Lookahead weights are synced into the
live parameters, which is what evaluation then sees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Bag
from .graph import KnnGraph, build_knn
from .loss import MISSING
from .model import ModelConfig, ModelParams, backward
from .optim import OptimState, adamw_step, force_sync, lookahead_sync
from .rng import derive_stream


def bag_graphs(bag: Bag, config: ModelConfig) -> list[KnnGraph] | None:
    """Per-layer neighborhood graphs for one bag (None in global mode)."""
    if config.mode == "global":
        return None
    return [build_knn(bag.coords, k, config.include_self) for k in config.k]


@dataclass
class TrainResult:
    epoch_losses: list[float]
    steps: int


def train_model(
    bags: list[Bag],
    graphs: list[list[KnnGraph] | None],
    class_weights: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    state: OptimState,
    *,
    epochs: int,
    seed: int,
    weighting: str = "both",
) -> TrainResult:
    """Train in place for ``epochs`` passes over ``bags``.

    ``graphs`` must align with ``bags`` (see bag_graphs); passing them in
    lets callers build each bag's graphs once and reuse them across epochs
    and folds.  Bags whose labels are all missing are skipped.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if len(graphs) != len(bags):
        raise ValueError(f"{len(bags)} bags but {len(graphs)} graph lists")
    if not bags:
        raise ValueError("no bags to train on")

    grad_buf = np.empty_like(params.flat)
    epoch_losses: list[float] = []
    steps = 0
    for epoch in range(epochs):
        order = list(range(len(bags)))
        derive_stream(seed, "order", epoch).shuffle(order)
        total = 0.0
        counted = 0
        for i in order:
            bag = bags[i]
            if (bag.labels == MISSING).all():
                continue
            loss, _, _ = backward(
                bag.features,
                graphs[i],
                bag.labels,
                class_weights,
                params,
                config,
                weighting,
                grad_buf,
            )
            adamw_step(params.flat, grad_buf, state)
            lookahead_sync(params.flat, state)
            total += loss
            counted += 1
            steps += 1
        if counted == 0:
            raise ValueError("every bag has all labels missing")
        epoch_losses.append(total / counted)
    force_sync(params.flat, state)
    return TrainResult(epoch_losses=epoch_losses, steps=steps)
