"""Local attention on a complete graph reproduces dense attention.

The local path only ever touches the k listed neighbors of each tile, so
when the graph lists everyone, both paths compute the same softmax over
the same logits.  This prints the worst relative gap over a batch of
random layers; it sits at rounding noise.

Run with:  python3 demos/local_equals_global.py
"""

import numpy as np

from lamil.attention import (
    AttentionLayerParams,
    global_attention_forward,
    local_attention_forward,
)
from lamil.graph import build_knn

rng = np.random.default_rng(42)

worst = 0.0
for trial in range(20):
    n = int(rng.integers(2, 48))
    d, heads = 16, 4
    dk = d // heads
    params = AttentionLayerParams(
        q=rng.standard_normal((heads, dk, d)) / np.sqrt(d),
        k=rng.standard_normal((heads, dk, d)) / np.sqrt(d),
        v=rng.standard_normal((heads, dk, d)) / np.sqrt(d),
        o=rng.standard_normal((d, d)) / np.sqrt(d),
        gamma=np.ones(d),
        beta=np.zeros(d),
    )
    tokens = rng.standard_normal((n, d))
    graph = build_knn(rng.uniform(0, 10, (n, 2)), n)  # k=n: complete
    local, _, _ = local_attention_forward(tokens, graph, params)
    dense, _, _ = global_attention_forward(tokens, params)
    gap = np.max(np.abs(local - dense)) / max(1.0, np.max(np.abs(dense)))
    worst = max(worst, gap)
    print(f"trial {trial:2d}: n={n:2d}  relative gap {gap:.3e}")

print(f"\nworst over 20 trials: {worst:.3e}")
assert worst < 1e-10
