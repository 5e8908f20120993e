"""
Inspecting the learned graph and the router weights
====================================================

One forward pass exposes every intermediate: the attention adjacency per
window, the per-layer GNN embeddings, the expert outputs and the router
weights that mix them. This demo looks at an untrained and a briefly
trained model side by side.
"""

import numpy as np

from graphmoe import GraphMoE, TrainConfig, default_config, generate, prepare, train

series = generate(default_config(seed=1))
cfg = TrainConfig(hidden=8, graph_dim=8, mem_dim=8, epochs=3)
splits = prepare(series, cfg)
x = splits.test.windows[:20]

np.set_printoptions(precision=3, suppress=True)

for label, model in [("untrained", GraphMoE.init(cfg)),
                     ("trained", train(cfg, splits.train).model())]:
    out = model.forward(x)
    print("==", label)
    # each row of A is a distribution over the entities a node listens to
    print("adjacency of window 0:\n", out.A.data[0])
    print("row sums:", out.A.data[0].sum(axis=1))
    # the router emits one weight per GNN layer and window
    print("router weights, first 5 windows:\n", out.R.data[:5])
    print("memory advanced", out.memory.step, "steps")

# the router can be switched off: every layer then gets the same weight
flat = GraphMoE.init(TrainConfig(hidden=8, graph_dim=8, mem_dim=8, mar_enabled=False)).forward(x)
print("router disabled:", flat.R.data[0])
