"""
Real average sensitivity sweeps
===============================

How much the shared vectors disagree, averaged over a run, as the
number of shared layers, the out-degree and the network size change.
Each sweep uses a single seed here; the acceptance tests average three.
"""

from dpps.harness import ExperimentConfig, run_sensitivity_sweep

base = ExperimentConfig().with_updates(
    privacy={"c_prime": 0.95, "lam": 0.55},
    protocol={"sync_interval": 4},
    task={"n_examples": 40000},
    optimizer={"rounds": 150},
)

for axis, values, extra in [
    ("shared_layers", [1, 2, 3], {}),
    ("out_degree", [2, 4, 6, 8], {}),
    ("n_nodes", [10, 20, 40], {"topology": {"kind": "d_out", "d": 4}}),
]:
    rows = run_sensitivity_sweep(base.with_updates(**extra), axis, values, write=False)
    print(axis)
    for r in rows:
        print(f"  {r.axis_value:3d}  RAS {r.ras:8.3f}  peak {r.peak_sensitivity:8.3f}  acc {r.final_acc:.3f}")
