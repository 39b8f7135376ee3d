import numpy as np
import pytest

from lamil.data import Bag
from lamil.fileio import FormatError
from lamil.graph import KnnGraph, build_knn
from lamil.model import (
    BagOutput,
    ModelConfig,
    ModelParams,
    backward,
    bag_loss,
    count_params,
    forward,
    init_params,
    load_checkpoint,
    param_layout,
    save_checkpoint,
)
from lamil.optim import OptimState
from lamil.tensor import sigmoid
from lamil.train import bag_graphs, train_model
from oracles import OracleCase, fd_gradient


def small_config(**kw):
    base = dict(input_dim=8, targets=3, hidden_dim=4, heads=2, k=(3, 2))
    base.update(kw)
    return ModelConfig(**base)


def random_bag_inputs(rng, n, config):
    features = rng.standard_normal((n, config.input_dim))
    coords = rng.uniform(0, 8, size=(n, 2))
    graphs = [build_knn(coords, k) for k in config.k]
    return features, graphs


def test_count_params_default_architecture():
    cfg = ModelConfig(input_dim=1024, targets=10)
    # embed 512*1024+512, two layers at 4*512^2+2*512 each, head 10*512+10
    embed = 512 * 1024 + 512
    layer = 4 * 512 * 512 + 2 * 512
    head = 10 * 512 + 10
    assert count_params(cfg) == embed + 2 * layer + head == 2_629_130


def test_count_params_minimal():
    cfg = ModelConfig(input_dim=1, targets=1, hidden_dim=1, heads=1, k=(1,))
    assert count_params(cfg) == 10


def test_count_params_target_scaling():
    lo = ModelConfig(input_dim=64, targets=5, hidden_dim=16, heads=4, k=(4,))
    hi = ModelConfig(input_dim=64, targets=10, hidden_dim=16, heads=4, k=(4,))
    assert count_params(hi) - count_params(lo) == 16 * 5 + 5


def test_param_layout_covers_flat_exactly():
    cfg = small_config()
    total = sum(int(np.prod(shape)) for _, shape in param_layout(cfg))
    assert total == count_params(cfg)
    params = ModelParams.zeros(cfg)
    params.flat[:] = np.arange(total, dtype=np.float64)
    # views must tile the flat vector without overlap
    seen = np.concatenate(
        [params.embed_w.ravel(), params.embed_b.ravel()]
        + [
            np.concatenate(
                [l.q.ravel(), l.k.ravel(), l.v.ravel(), l.o.ravel(), l.gamma, l.beta]
            )
            for l in params.layers
        ]
        + [params.head_w.ravel(), params.head_b.ravel()]
    )
    assert np.array_equal(np.sort(seen), np.arange(total, dtype=np.float64))


def test_forward_shape_contract():
    rng = OracleCase(30).rng()
    cfg = small_config()
    features, graphs = random_bag_inputs(rng, 5, cfg)
    params = init_params(cfg, 1)
    out = forward(features, graphs, params, cfg)
    assert isinstance(out, BagOutput)
    assert out.logits.shape == (3,)
    assert out.embedding.shape == (4,)
    assert out.caches[0].weights.shape == (5, 3, 2)
    assert out.caches[1].weights.shape == (5, 2, 2)
    assert np.array_equal(out.probabilities, sigmoid(out.logits))
    assert np.allclose(out.probabilities, 1.0 / (1.0 + np.exp(-out.logits)), rtol=1e-12)


def test_zero_params_give_half_probabilities():
    rng = OracleCase(31).rng()
    cfg = small_config()
    features, graphs = random_bag_inputs(rng, 4, cfg)
    out = forward(features, graphs, ModelParams.zeros(cfg), cfg)
    assert np.array_equal(out.probabilities, [0.5, 0.5, 0.5])


def test_local_complete_graph_matches_global():
    rng = OracleCase(32).rng()
    n = 9
    local = small_config(k=(n, n))
    glob = small_config(mode="global", k=(n, n))
    flat = init_params(local, 3).flat
    features, graphs = random_bag_inputs(rng, n, local)
    out_l = forward(features, graphs, ModelParams.from_flat(flat, local), local)
    out_g = forward(features, None, ModelParams.from_flat(flat.copy(), glob), glob)
    assert np.max(np.abs(out_l.logits - out_g.logits)) < 1e-10


@pytest.mark.parametrize("weighting", ["both", "positive"])
def test_backward_matches_finite_differences(weighting):
    rng = OracleCase(33).rng()
    cfg = small_config()
    features, graphs = random_bag_inputs(rng, 5, cfg)
    labels = np.array([1, 0, 255], dtype=np.uint8)
    weights = np.array([2.5, 0.4, 1.7])  # unbalanced so the modes differ
    flat0 = init_params(cfg, 5).flat

    def f(flat):
        return bag_loss(flat, cfg, features, graphs, labels, weights, weighting)[0]

    fd = fd_gradient(f, flat0.copy())
    _, got = bag_loss(flat0, cfg, features, graphs, labels, weights, weighting)
    denom = np.maximum(1.0, np.abs(fd))
    assert np.max(np.abs(got - fd) / denom) < 1e-6


def test_weighting_modes_differ_on_negative_labels():
    rng = OracleCase(34).rng()
    cfg = small_config()
    features, graphs = random_bag_inputs(rng, 5, cfg)
    labels = np.array([0, 0, 1], dtype=np.uint8)
    weights = np.array([3.0, 0.25, 2.0])
    flat = init_params(cfg, 5).flat
    loss_b, grad_b = bag_loss(flat, cfg, features, graphs, labels, weights, "both")
    loss_p, grad_p = bag_loss(
        flat.copy(), cfg, features, graphs, labels, weights, "positive"
    )
    assert loss_b != loss_p
    assert not np.array_equal(grad_b, grad_p)


def test_zero_class_weights_zero_gradient():
    rng = OracleCase(35).rng()
    cfg = small_config()
    features, graphs = random_bag_inputs(rng, 4, cfg)
    labels = np.array([1, 0, 1], dtype=np.uint8)
    flat = init_params(cfg, 6).flat
    loss, grad = bag_loss(flat, cfg, features, graphs, labels, np.zeros(3), "both")
    assert loss == 0.0
    assert np.array_equal(grad, np.zeros_like(grad))


def test_logits_permutation_invariant():
    rng = OracleCase(36).rng()
    cfg = small_config()
    n = 12
    features, graphs = random_bag_inputs(rng, n, cfg)
    params = init_params(cfg, 2)
    base = forward(features, graphs, params, cfg).logits

    perm = rng.permutation(n)
    inv = np.empty(n, dtype=np.int64)
    inv[perm] = np.arange(n)
    relabeled = [
        KnnGraph(n=n, k=g.k, neighbors=inv[g.neighbors[perm]], include_self=True)
        for g in graphs
    ]
    permuted = forward(features[perm], relabeled, params, cfg).logits
    assert np.max(np.abs(permuted - base)) < 1e-12


def test_init_determinism_and_bounds():
    cfg = small_config()
    a = init_params(cfg, 42)
    b = init_params(cfg, 42)
    c = init_params(cfg, 43)
    assert np.array_equal(a.flat, b.flat)
    assert not np.array_equal(a.flat, c.flat)

    assert np.array_equal(a.embed_b, np.zeros(4))
    assert np.array_equal(a.head_b, np.zeros(3))
    for layer in a.layers:
        assert np.array_equal(layer.gamma, np.ones(4))
        assert np.array_equal(layer.beta, np.zeros(4))

    # Xavier-uniform ranges per weight array; q/k/v bounds use the
    # per-head (d_k, d) fans
    bound_embed = np.sqrt(6.0 / (cfg.input_dim + cfg.hidden_dim))
    assert np.abs(a.embed_w).max() <= bound_embed
    bound_qkv = np.sqrt(6.0 / (cfg.head_dim + cfg.hidden_dim))
    bound_square = np.sqrt(6.0 / (cfg.hidden_dim + cfg.hidden_dim))
    for layer in a.layers:
        for arr in (layer.q, layer.k, layer.v):
            assert np.abs(arr).max() <= bound_qkv
        assert np.abs(layer.o).max() <= bound_square
    bound_head = np.sqrt(6.0 / (cfg.hidden_dim + cfg.targets))
    assert np.abs(a.head_w).max() <= bound_head


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(
        input_dim=12,
        targets=2,
        hidden_dim=6,
        heads=3,
        k=(4, 7),
        mode="local",
        include_self=False,
    )
    params = init_params(cfg, 9)
    first = tmp_path / "model.lamp"
    save_checkpoint(str(first), params, cfg)

    loaded, loaded_cfg = load_checkpoint(str(first))
    assert loaded_cfg == cfg
    assert np.array_equal(loaded.flat, params.flat)

    second = tmp_path / "again.lamp"
    save_checkpoint(str(second), loaded, loaded_cfg)
    assert first.read_bytes() == second.read_bytes()


def test_checkpoint_bad_magic_offset(tmp_path):
    cfg = small_config()
    path = tmp_path / "model.lamp"
    save_checkpoint(str(path), init_params(cfg, 0), cfg)
    blob = bytearray(path.read_bytes())
    blob[:4] = b"XXXX"
    path.write_bytes(bytes(blob))
    with pytest.raises(FormatError) as err:
        load_checkpoint(str(path))
    assert err.value.offset == 0


def test_checkpoint_truncation_rejected(tmp_path):
    cfg = small_config()
    path = tmp_path / "model.lamp"
    save_checkpoint(str(path), init_params(cfg, 0), cfg)
    blob = path.read_bytes()
    path.write_bytes(blob[: len(blob) - 3])
    with pytest.raises(FormatError):
        load_checkpoint(str(path))


def test_checkpoint_trailing_garbage_rejected(tmp_path):
    cfg = small_config()
    path = tmp_path / "model.lamp"
    save_checkpoint(str(path), init_params(cfg, 0), cfg)
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load_checkpoint(str(path))


def test_input_validation():
    rng = OracleCase(37).rng()
    cfg = small_config()
    params = init_params(cfg, 0)
    features, graphs = random_bag_inputs(rng, 5, cfg)
    with pytest.raises(ValueError):
        forward(rng.standard_normal((5, 9)), graphs, params, cfg)
    with pytest.raises(ValueError):
        forward(features, graphs[:1], params, cfg)
    with pytest.raises(ValueError):
        forward(features, None, params, cfg)


def test_local_full_graph_training_matches_global():
    rng = OracleCase(38).rng()
    n, bags_n = 6, 4
    local = ModelConfig(input_dim=5, targets=2, hidden_dim=4, heads=2, k=(n,))
    glob = ModelConfig(
        input_dim=5, targets=2, hidden_dim=4, heads=2, k=(n,), mode="global"
    )
    bags = []
    for b in range(bags_n):
        bags.append(
            Bag(
                bag_id=f"b{b}",
                patient_id=f"p{b}",
                coords=rng.uniform(0, 4, (n, 2)),
                features=rng.standard_normal((n, 5)),
                labels=np.array([b % 2, (b + 1) % 2], dtype=np.uint8),
            )
        )
    weights = np.array([1.5, 0.75])

    def run(cfg):
        params = ModelParams.from_flat(init_params(local, 11).flat.copy(), cfg)
        graphs = [bag_graphs(bag, cfg) for bag in bags]
        state = OptimState.create(params.flat, lr=1e-3)
        result = train_model(
            bags, graphs, weights, params, cfg, state, epochs=3, seed=4
        )
        return np.array(result.epoch_losses), params.flat

    losses_l, flat_l = run(local)
    losses_g, flat_g = run(glob)
    assert np.max(np.abs(losses_l - losses_g)) < 1e-8
    assert np.max(np.abs(flat_l - flat_g)) < 1e-8
