"""The full network: embed, attention blocks, mean pool, classify.

Forward path per bag: features (n x D) -> linear downscale to d (no
nonlinearity) -> l post-norm attention blocks (local over a kNN graph per
layer, or global for the baseline) -> arithmetic mean over tokens -> linear
head to T logits -> sigmoid.  No positional encoding: spatial structure
enters only through the graphs.

All learnable arrays live in one flat float64 vector with a fixed layout
(embedding, layers in order, head); ModelParams holds reshaped views into
it.  That makes optimizer state, checkpoints, and finite-difference
perturbation all operate on a single array.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionLayerParams,
    transformer_block,
    transformer_block_backward,
)
from .fileio import ByteReader, FormatError
from .graph import KnnGraph
from .loss import loss_grad, weighted_bce
from .rng import derive_stream
from .tensor import sigmoid

MODES = ("local", "global")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    input_dim D, hidden_dim d, targets T, heads H; ``k`` gives the neighbor
    count per layer, so the layer count is len(k).  Global mode ignores the
    k values but keeps the layer count.  ``include_self`` controls whether
    kNN neighborhoods contain the query tile.
    """

    input_dim: int
    targets: int
    hidden_dim: int = 512
    heads: int = 8
    k: tuple[int, ...] = (16, 64)
    mode: str = "local"
    include_self: bool = True

    def __post_init__(self):
        object.__setattr__(self, "k", tuple(int(x) for x in self.k))
        if self.input_dim < 1 or self.hidden_dim < 1 or self.targets < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.heads < 1 or self.hidden_dim % self.heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} must be divisible by heads {self.heads}"
            )
        if len(self.k) < 1:
            raise ValueError("need at least one layer (k list empty)")
        if any(kk < 1 for kk in self.k):
            raise ValueError(f"per-layer k must be >= 1, got {self.k}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")

    @property
    def layers(self) -> int:
        return len(self.k)

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads


def param_layout(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Fixed (name, shape) sequence defining the flat parameter order."""
    d, big_d, t = config.hidden_dim, config.input_dim, config.targets
    h, dk = config.heads, config.head_dim
    layout = [("embed_w", (d, big_d)), ("embed_b", (d,))]
    for i in range(config.layers):
        layout += [
            (f"layer{i}.q", (h, dk, d)),
            (f"layer{i}.k", (h, dk, d)),
            (f"layer{i}.v", (h, dk, d)),
            (f"layer{i}.o", (d, d)),
            (f"layer{i}.gamma", (d,)),
            (f"layer{i}.beta", (d,)),
        ]
    layout += [("head_w", (t, d)), ("head_b", (t,))]
    return layout


def count_params(config: ModelConfig) -> int:
    """Total learnable scalar count: the exact sum of all array sizes."""
    return sum(int(np.prod(shape)) for _, shape in param_layout(config))


@dataclass(eq=False)
class ModelParams:
    """Views into one flat parameter vector, shaped per param_layout."""

    flat: np.ndarray
    embed_w: np.ndarray
    embed_b: np.ndarray
    layers: list[AttentionLayerParams]
    head_w: np.ndarray
    head_b: np.ndarray

    @classmethod
    def from_flat(cls, flat: np.ndarray, config: ModelConfig) -> "ModelParams":
        expected = count_params(config)
        if flat.shape != (expected,):
            raise ValueError(f"flat vector has shape {flat.shape}, expected ({expected},)")
        views: dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in param_layout(config):
            size = int(np.prod(shape))
            views[name] = flat[offset : offset + size].reshape(shape)
            offset += size
        layers = [
            AttentionLayerParams(
                q=views[f"layer{i}.q"],
                k=views[f"layer{i}.k"],
                v=views[f"layer{i}.v"],
                o=views[f"layer{i}.o"],
                gamma=views[f"layer{i}.gamma"],
                beta=views[f"layer{i}.beta"],
            )
            for i in range(config.layers)
        ]
        return cls(
            flat=flat,
            embed_w=views["embed_w"],
            embed_b=views["embed_b"],
            layers=layers,
            head_w=views["head_w"],
            head_b=views["head_b"],
        )

    @classmethod
    def zeros(cls, config: ModelConfig) -> "ModelParams":
        return cls.from_flat(np.zeros(count_params(config)), config)


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Xavier-uniform weights, zero biases, unit layer-norm scales.

    Each weight array W of shape (out, in) draws uniformly from
    +-sqrt(6 / (in + out)); Q/K/V are initialized per head, so their bound
    uses (d_k, d).  Fully determined by the seed.
    """
    params = ModelParams.zeros(config)
    stream = derive_stream(seed, "init")
    views = dict(zip([n for n, _ in param_layout(config)], _iter_views(params)))
    for name, arr in views.items():
        base = name.split(".")[-1]
        if base in ("embed_b", "head_b", "beta"):
            continue  # already zero
        if base == "gamma":
            arr[...] = 1.0
            continue
        if base in ("q", "k", "v"):
            fan_out, fan_in = arr.shape[1], arr.shape[2]
        else:
            fan_out, fan_in = arr.shape
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        u = stream.uniforms(arr.size)
        arr[...] = (bound * (2.0 * u - 1.0)).reshape(arr.shape)
    return params


def _iter_views(params: ModelParams):
    yield params.embed_w
    yield params.embed_b
    for layer in params.layers:
        yield layer.q
        yield layer.k
        yield layer.v
        yield layer.o
        yield layer.gamma
        yield layer.beta
    yield params.head_w
    yield params.head_b


@dataclass(eq=False)
class BagOutput:
    """One bag's forward results."""

    logits: np.ndarray
    probabilities: np.ndarray
    embedding: np.ndarray
    caches: list  # AttentionCache per layer
    states: list = field(repr=False, default_factory=list)
    features: np.ndarray | None = field(repr=False, default=None)


def _check_inputs(features, graphs, config):
    features = np.ascontiguousarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.input_dim:
        raise ValueError(
            f"features shape {features.shape} does not match input_dim {config.input_dim}"
        )
    if config.mode == "local":
        if graphs is None or len(graphs) != config.layers:
            got = 0 if graphs is None else len(graphs)
            raise ValueError(f"local mode needs {config.layers} graphs, got {got}")
        for i, g in enumerate(graphs):
            if not isinstance(g, KnnGraph):
                raise ValueError(f"graph {i} is not a KnnGraph")
            if g.n != features.shape[0]:
                raise ValueError(
                    f"graph {i} has {g.n} tiles but bag has {features.shape[0]}"
                )
        return features, list(graphs)
    return features, [None] * config.layers


def forward(
    features: np.ndarray,
    graphs: list[KnnGraph] | None,
    params: ModelParams,
    config: ModelConfig,
) -> BagOutput:
    """Run one bag through the network; caches stay attached to the output."""
    features, layer_graphs = _check_inputs(features, graphs, config)
    tokens = features @ params.embed_w.T + params.embed_b
    caches = []
    states = []
    for graph, layer in zip(layer_graphs, params.layers):
        tokens, cache, state = transformer_block(tokens, graph, layer)
        caches.append(cache)
        states.append(state)
    embedding = tokens.mean(axis=0)
    logits = params.head_w @ embedding + params.head_b
    return BagOutput(
        logits=logits,
        probabilities=sigmoid(logits),
        embedding=embedding,
        caches=caches,
        states=states,
        features=features,
    )


def backward(
    features: np.ndarray,
    graphs: list[KnnGraph] | None,
    labels: np.ndarray,
    class_weights: np.ndarray,
    params: ModelParams,
    config: ModelConfig,
    weighting: str = "both",
    grad_flat: np.ndarray | None = None,
) -> tuple[float, ModelParams, BagOutput]:
    """Loss and its exact gradient w.r.t. every parameter for one bag.

    Returns (loss, gradients as ModelParams-shaped views, forward output).
    ``grad_flat`` may supply a preallocated buffer; every entry is
    overwritten, so reuse across steps needs no zeroing.
    """
    output = forward(features, graphs, params, config)
    value = weighted_bce(output.logits, labels, class_weights, weighting)
    dlogits = loss_grad(output.logits, labels, class_weights, weighting)

    if grad_flat is None:
        grad_flat = np.empty_like(params.flat)
    grads = ModelParams.from_flat(grad_flat, config)

    n = output.features.shape[0]
    grads.head_w[:] = np.outer(dlogits, output.embedding)
    grads.head_b[:] = dlogits
    d_tokens = np.broadcast_to(params.head_w.T @ dlogits / n, (n, config.hidden_dim))
    for state, layer, layer_grads in zip(
        reversed(output.states), reversed(params.layers), reversed(grads.layers)
    ):
        d_tokens = transformer_block_backward(d_tokens, state, layer, layer_grads)
    np.matmul(d_tokens.T, output.features, out=grads.embed_w)
    grads.embed_b[:] = d_tokens.sum(axis=0)
    return value, grads, output


def bag_loss(
    flat: np.ndarray,
    config: ModelConfig,
    features: np.ndarray,
    graphs: list[KnnGraph] | None,
    labels: np.ndarray,
    class_weights: np.ndarray,
    weighting: str = "both",
) -> tuple[float, np.ndarray]:
    """(loss, flat gradient) as a function of the flat parameter vector."""
    params = ModelParams.from_flat(np.asarray(flat, dtype=np.float64), config)
    value, grads, _ = backward(
        features, graphs, labels, class_weights, params, config, weighting
    )
    return value, grads.flat


_LAMP_MAGIC = b"LAMP"
_LAMP_VERSION = 1
_MODE_CODES = {"local": 0, "global": 1}
_MODE_NAMES = {v: k for k, v in _MODE_CODES.items()}


def save_checkpoint(path: str, params: ModelParams, config: ModelConfig) -> None:
    """Write a LAMP checkpoint: config header + flat f64 parameters."""
    parts = [
        _LAMP_MAGIC,
        struct.pack("<H", _LAMP_VERSION),
        struct.pack(
            "<IIIII",
            config.input_dim,
            config.hidden_dim,
            config.targets,
            config.layers,
            config.heads,
        ),
        struct.pack("<BB", _MODE_CODES[config.mode], int(config.include_self)),
        struct.pack(f"<{config.layers}I", *config.k),
        np.ascontiguousarray(params.flat, dtype="<f8").tobytes(),
    ]
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_checkpoint(path: str) -> tuple[ModelParams, ModelConfig]:
    """Read a LAMP checkpoint back; inverse of save_checkpoint."""
    with open(path, "rb") as fh:
        reader = ByteReader(fh.read())
    magic = reader.take(4, "magic")
    if magic != _LAMP_MAGIC:
        raise FormatError(0, f"bad magic {magic!r}, expected {_LAMP_MAGIC!r}")
    version = reader.u16("version")
    if version != _LAMP_VERSION:
        raise FormatError(4, f"unsupported version {version}")
    input_dim = reader.u32("input_dim")
    hidden_dim = reader.u32("hidden_dim")
    targets = reader.u32("targets")
    layers = reader.u32("layers")
    heads = reader.u32("heads")
    mode_code = reader.u8("mode")
    if mode_code not in _MODE_NAMES:
        raise FormatError(reader.offset - 1, f"unknown mode code {mode_code}")
    include_self = reader.u8("include_self")
    k = tuple(int(reader.u32(f"k[{i}]")) for i in range(layers))
    config = ModelConfig(
        input_dim=input_dim,
        targets=targets,
        hidden_dim=hidden_dim,
        heads=heads,
        k=k,
        mode=_MODE_NAMES[mode_code],
        include_self=bool(include_self),
    )
    flat = reader.array("<f8", count_params(config), "parameters")
    reader.expect_end()
    return ModelParams.from_flat(flat, config), config
