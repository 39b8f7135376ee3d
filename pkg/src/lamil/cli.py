"""Command-line front end: synth, train, cv, eval, attend.

Every command is deterministic given its flags and input files.  Data goes
only to the files named on the command line; everything a human reads goes
to stderr.  Hyperparameters come from a line-oriented config file of
``key = value`` pairs with ``#`` comments; unknown keys are hard errors so
a typo cannot silently train the wrong model.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .attention import attention_scores
from .data import Dataset, load_bag, load_manifest, save_dataset, stratified_kfold
from .data import synth_dataset
from .evaluation import auroc, cross_validate
from .loss import MISSING, WEIGHTING_MODES, pos_weights
from .model import (
    ModelConfig,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import OptimState
from .rng import derive_stream
from .train import bag_graphs, train_model

# Learning-rate presets for the two named tuning profiles.
PRESETS = {"crc": 2e-5, "stad": 2e-4}


@dataclass(frozen=True)
class RunConfig:
    """Everything a training run reads from the config file.

    input_dim defaults to the classic 1024-dim extractor profile but only
    binds when set explicitly; otherwise the data's feature width is used.
    """

    input_dim: int = 1024
    input_dim_set: bool = False
    hidden_dim: int = 512
    heads: int = 8
    k: tuple[int, ...] = (16, 64)
    mode: str = "local"
    include_self: bool = True
    weighting: str = "both"
    lr: float = 2e-5
    weight_decay: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lookahead_alpha: float = 0.5
    lookahead_k: int = 5
    epochs: int = 10
    seed: int = 1


def _parse_bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes"):
        return True
    if text.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected true/false, got {text!r}")


def _parse_k(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p.strip()) for p in text.split(",") if p.strip())
    except ValueError as exc:
        raise ValueError(f"k must be comma-separated integers, got {text!r}") from exc


_CONFIG_PARSERS = {
    "input_dim": int,
    "hidden_dim": int,
    "heads": int,
    "k": _parse_k,
    "mode": str,
    "include_self": _parse_bool,
    "weighting": str,
    "lr": float,
    "weight_decay": float,
    "beta1": float,
    "beta2": float,
    "eps": float,
    "lookahead_alpha": float,
    "lookahead_k": int,
    "epochs": int,
    "seed": int,
}


def parse_config(path: str) -> RunConfig:
    """Read a config file; unknown keys and bad values error with a line number."""
    config = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "preset":
            if value not in PRESETS:
                raise ValueError(
                    f"{path}:{lineno}: unknown preset {value!r}, "
                    f"choose from {sorted(PRESETS)}"
                )
            config = replace(config, lr=PRESETS[value])
            continue
        parser = _CONFIG_PARSERS.get(key)
        if parser is None:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            config = replace(config, **{key: parser(value)})
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        if key == "input_dim":
            config = replace(config, input_dim_set=True)
    if config.mode not in ("local", "global"):
        raise ValueError(f"{path}: mode must be local or global, got {config.mode!r}")
    if config.weighting not in WEIGHTING_MODES:
        raise ValueError(
            f"{path}: weighting must be one of {WEIGHTING_MODES}, "
            f"got {config.weighting!r}"
        )
    return config


def _model_config(run: RunConfig, dataset: Dataset) -> ModelConfig:
    d = dataset.bags[0].features.shape[1]
    if run.input_dim != d:
        if run.input_dim_set:
            raise ValueError(
                f"config input_dim {run.input_dim} does not match data dim {d}"
            )
        _note(f"using feature dim {d} from the data")
    return ModelConfig(
        input_dim=d,
        targets=len(dataset.target_names),
        hidden_dim=run.hidden_dim,
        heads=run.heads,
        k=run.k,
        mode=run.mode,
        include_self=run.include_self,
    )


def _parse_tiles(text: str) -> int | tuple[int, int]:
    if ":" in text:
        lo, _, hi = text.partition(":")
        return (int(lo), int(hi))
    return int(text)


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_synth(args) -> int:
    dataset = synth_dataset(
        bags=args.bags,
        tiles=_parse_tiles(args.tiles),
        input_dim=args.dim,
        targets=args.targets,
        radius=args.radius,
        effect=args.effect,
        seed=args.seed,
    )
    manifest = save_dataset(dataset, args.out)
    _note(f"wrote {len(dataset.bags)} bags and {manifest}")
    return 0


def _load_run(args) -> RunConfig:
    run = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    return run


def cmd_train(args) -> int:
    if (args.folds is None) != (args.holdout is None):
        raise ValueError("--folds and --holdout must be given together")
    run = _load_run(args)
    dataset = load_manifest(args.data)
    config = _model_config(run, dataset)

    indices = np.arange(len(dataset.bags))
    if args.folds is not None:
        if not 0 <= args.holdout < args.folds:
            raise ValueError(
                f"--holdout must be in [0, {args.folds}), got {args.holdout}"
            )
        assignment = stratified_kfold(dataset, args.folds, run.seed)
        indices = np.flatnonzero(assignment != args.holdout)
        _note(f"holding out fold {args.holdout}: training on {indices.size} bags")

    bags = [dataset.bags[i] for i in indices]
    class_weights = pos_weights(np.stack([b.labels for b in bags]))
    graphs = [bag_graphs(b, config) for b in bags]
    params = init_params(config, derive_stream(run.seed, "init-seed").next_u64())
    state = OptimState.create(
        params.flat,
        lr=run.lr,
        beta1=run.beta1,
        beta2=run.beta2,
        eps=run.eps,
        weight_decay=run.weight_decay,
        lookahead_alpha=run.lookahead_alpha,
        lookahead_k=run.lookahead_k,
    )
    result = train_model(
        bags,
        graphs,
        class_weights,
        params,
        config,
        state,
        epochs=run.epochs,
        seed=derive_stream(run.seed, "train-order").next_u64(),
        weighting=run.weighting,
    )
    save_checkpoint(args.out, params, config)
    _note(
        f"trained {result.steps} steps over {run.epochs} epochs, "
        f"final mean loss {result.epoch_losses[-1]:.6f}; wrote {args.out}"
    )
    return 0


def cmd_cv(args) -> int:
    if args.folds < 2:
        raise ValueError(f"--folds must be >= 2, got {args.folds}")
    run = _load_run(args)
    dataset = load_manifest(args.data)
    config = _model_config(run, dataset)
    report = cross_validate(
        dataset,
        config,
        folds=args.folds,
        epochs=run.epochs,
        lr=run.lr,
        weight_decay=run.weight_decay,
        seed=run.seed,
        weighting=run.weighting,
        beta1=run.beta1,
        beta2=run.beta2,
        eps=run.eps,
        lookahead_alpha=run.lookahead_alpha,
        lookahead_k=run.lookahead_k,
    )
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write(report.to_csv())
    means = report.mean_auroc()
    for name, value in zip(report.target_names, means):
        _note(f"{name}: mean auroc {value:.4f}")
    _note(f"wrote {args.report}")
    return 0


def cmd_eval(args) -> int:
    dataset = load_manifest(args.data)
    params, config = load_checkpoint(args.model)
    d = dataset.bags[0].features.shape[1]
    if config.input_dim != d:
        raise ValueError(
            f"checkpoint expects {config.input_dim}-dim features, data has {d}"
        )
    if config.targets != len(dataset.target_names):
        raise ValueError(
            f"checkpoint has {config.targets} targets, "
            f"data has {len(dataset.target_names)}"
        )
    scores = np.empty((len(dataset.bags), config.targets))
    for i, bag in enumerate(dataset.bags):
        graphs = bag_graphs(bag, config)
        scores[i] = forward(bag.features, graphs, params, config).probabilities
    labels = dataset.label_table()
    lines = ["target,auroc"]
    for t, name in enumerate(dataset.target_names):
        known = labels[:, t] != MISSING
        y = labels[known, t]
        if y.size == 0 or (y == 1).all() or (y == 0).all():
            _note(f"target {name} has a single class; auroc is undefined")
            lines.append(f"{name},nan")
            continue
        value = auroc(scores[known, t], y)
        lines.append(f"{name},{value:.4f}")
        _note(f"{name}: auroc {value:.4f}")
    with open(args.report, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _note(f"wrote {args.report}")
    return 0


def _svg_heatmap(coords: np.ndarray, scores: np.ndarray) -> str:
    """One unit square per tile on a white-to-red ramp, in tile coordinates."""
    pad = 1.0
    x0 = float(coords[:, 0].min()) - pad
    y0 = float(coords[:, 1].min()) - pad
    x1 = float(coords[:, 0].max()) + pad
    y1 = float(coords[:, 1].max()) + pad
    scale = 20.0  # pixels per tile unit
    width = (x1 - x0) * scale
    height = (y1 - y0) * scale
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" '
        f'height="{height:.0f}" viewBox="{x0:.3f} {y0:.3f} '
        f'{x1 - x0:.3f} {y1 - y0:.3f}">',
        f'<rect x="{x0:.3f}" y="{y0:.3f}" width="{x1 - x0:.3f}" '
        f'height="{y1 - y0:.3f}" fill="white"/>',
    ]
    for (x, y), s in zip(coords, scores):
        other = int(round(255.0 * (1.0 - float(s))))
        parts.append(
            f'<rect x="{x - 0.5:.3f}" y="{y - 0.5:.3f}" width="1" height="1" '
            f'fill="rgb(255,{other},{other})"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_attend(args) -> int:
    params, config = load_checkpoint(args.model)
    bag = load_bag(args.bag)
    if bag.features.shape[1] != config.input_dim:
        raise ValueError(
            f"checkpoint expects {config.input_dim}-dim features, "
            f"bag has {bag.features.shape[1]}"
        )
    layer = args.layer if args.layer is not None else config.layers - 1
    if not 0 <= layer < config.layers:
        raise ValueError(
            f"--layer must be in [0, {config.layers}), got {layer}"
        )
    graphs = bag_graphs(bag, config)
    output = forward(bag.features, graphs, params, config)
    scores = attention_scores(
        output.caches[layer], None if graphs is None else graphs[layer]
    )
    lines = ["tile_index,x,y,score"]
    for i in range(bag.n):
        lines.append(
            f"{i},{bag.coords[i, 0]:.6f},{bag.coords[i, 1]:.6f},{scores[i]:.6f}"
        )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    _note(f"wrote {args.out}")
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(_svg_heatmap(bag.coords, scores))
        _note(f"wrote {args.svg}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lamil",
        description="Local-attention graph transformer for multiple-instance "
        "learning over spatial bags.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a planted-motif dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--bags", type=int, required=True)
    p.add_argument("--tiles", required=True, help="count or inclusive lo:hi range")
    p.add_argument("--dim", type=int, required=True, help="feature dimension")
    p.add_argument("--targets", type=int, required=True)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--effect", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a manifest and save a checkpoint")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--config", help="config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--folds", type=int, help="with --holdout: train on a fold split")
    p.add_argument("--holdout", type=int, help="fold index to exclude")
    p.set_defaults(func=cmd_train, seed=None)

    p = sub.add_parser("cv", help="stratified patient-disjoint cross-validation")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--config", help="config file")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--report", required=True, help="report CSV path")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="score a checkpoint on a manifest")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--report", required=True, help="per-target AUROC CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attend", help="export per-tile attention scores")
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--bag", required=True, help="LAMB bag path")
    p.add_argument("--layer", type=int, help="layer index (default: last)")
    p.add_argument("--out", required=True, help="scores CSV path")
    p.add_argument("--svg", help="optional heatmap SVG path")
    p.set_defaults(func=cmd_attend)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
