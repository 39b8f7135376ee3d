"""Compare the analytic bag gradient against central finite differences.

Every derivative in the package is written out by hand, so this is the
check that keeps the algebra honest: perturb each coordinate of the flat
parameter vector by ±h and compare the slope against backward().

Run with:  python3 demos/gradient_check.py
"""

import numpy as np

from lamil.graph import build_knn
from lamil.model import ModelConfig, bag_loss, init_params, param_layout

H = 1e-5

config = ModelConfig(input_dim=6, targets=2, hidden_dim=4, heads=2, k=(3,))
rng = np.random.default_rng(7)

features = rng.standard_normal((5, 6))
graphs = [build_knn(rng.uniform(0, 3, (5, 2)), k) for k in config.k]
labels = np.array([1, 0], dtype=np.uint8)
weights = np.array([1.8, 0.6])

flat = init_params(config, seed=0).flat
loss, grad = bag_loss(flat, config, features, graphs, labels, weights)
print(f"bag loss {loss:.6f}, {flat.size} parameters")

fd = np.empty_like(flat)
for i in range(flat.size):
    saved = flat[i]
    flat[i] = saved + H
    up = bag_loss(flat, config, features, graphs, labels, weights)[0]
    flat[i] = saved - H
    down = bag_loss(flat, config, features, graphs, labels, weights)[0]
    flat[i] = saved
    fd[i] = (up - down) / (2 * H)

offset = 0
print(f"\n{'array':>10} {'max |analytic - fd|':>22}")
for name, shape in param_layout(config):
    size = int(np.prod(shape))
    gap = np.max(np.abs(grad[offset : offset + size] - fd[offset : offset + size]))
    print(f"{name:>10} {gap:22.3e}")
    offset += size

print(f"\noverall max gap: {np.max(np.abs(grad - fd)):.3e}")
