"""The model zoo: single GCN, plain ensembles, prolongation ensembles,
structure-matrix powers, and differentiable pooling.

Each model maps an (n, 10) node signal to an (n, 1) prediction at the fine
scale. Multiscale members see the input restricted through composed
prolongation transposes and contribute through the matching lift, so the
ensemble stays additive over its levels.
"""

import numpy as np

from gpcn import build_from_table, desk_hierarchy, init_model_params, model_forward, seeded_rng
from gpcn.training import model_forward_flops

hier = desk_hierarchy()
print("hierarchy:", " -> ".join(f"{g.name}({g.n})" for g in hier.graphs))
print("prolongations:", ", ".join(str(p.shape) for p in hier.prolongations))

rng = seeded_rng(0)
x = rng.normal(size=(hier.graphs[0].n, 10))

print(f"\n{'model':<12} {'levels':>6} {'params':>9} {'fwd flops':>12}")
for name in ("single_gcn", "ensemble3", "gpcn2", "gpcn3", "a_gpcn3", "ngcn3", "diffpool3"):
    spec = build_from_table(name, hier)
    params = init_model_params(spec, 10, seeded_rng(1))
    n_params = sum(arr.size for _, arr in params.all_arrays())
    flops, _ = model_forward_flops(spec, 10)
    out = model_forward(spec, params, x)
    assert out.shape == (hier.graphs[0].n, 1)
    print(f"{name:<12} {spec.n_levels:>6} {n_params:>9,} {flops:>12,}")

# additivity: a multiscale model is the sum of its per-level contributions
spec = build_from_table("gpcn3", hier)
params = init_model_params(spec, 10, seeded_rng(2))
total = model_forward(spec, params, x)
parts = sum(model_forward(spec, params, x, level_mask={i}) for i in range(3))
print(f"\ngpcn3 additivity over levels: max deviation {np.abs(total - parts).max():.2e}")
