"""
Toggling the experts and the memory router
===========================================

Train every combination of the two switches over a few seeds and report the
mean test AUROC, then sweep the number of GNN layers (one expert each).
Reduced sizes keep this to a few minutes; raise ``epochs`` and ``hidden``
for a closer look.
"""

from graphmoe import TrainConfig, ablate, default_config, generate
from graphmoe.trainer import write_ablation

series = generate(default_config(seed=0))
cfg = TrainConfig(hidden=8, graph_dim=8, mem_dim=8, epochs=5)

toggles, sweep = ablate(cfg, series, seeds=(0, 1, 2), experts=(1, 2, 3, 4))

print("moe  mar  AUROC (mean +- std over seeds)")
for moe, mar, mean, std, _ in toggles:
    print("%-4s %-4s %.4f +- %.4f" % ("on" if moe else "off", "on" if mar else "off", mean, std))

print("\nlayers  AUROC")
for n, mean, std, _ in sweep:
    print("%6d  %.4f +- %.4f" % (n, mean, std))

print("tables:", *write_ablation(toggles, sweep, "demo_out"))
