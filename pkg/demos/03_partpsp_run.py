"""
A PartPSP training run
======================

Trains the three-layer MLP on the synthetic task over an EXP graph with
only the first layer shared, then reads back the metrics file.
"""

import json
import math
import tempfile
from pathlib import Path

from dpps.harness import ExperimentConfig, read_metrics, run_experiment

out_dir = Path(tempfile.mkdtemp(prefix="dpps-demo-"))
cfg = ExperimentConfig().with_updates(
    output_dir=str(out_dir),
    optimizer={"rounds": 200, "metrics_interval": 20},
)
result = run_experiment(cfg)
print(json.dumps(json.loads((out_dir / "summary.json").read_text()), indent=2))

# one row per round; the two gradient measures are filled every metrics_interval rounds
rows = read_metrics(out_dir / "metrics.csv")
print("round   loss    estimate   real   delta_l  delta_sbar")
for r in rows:
    if not math.isnan(float(r["delta_l"])):
        print(f"{int(r['round']):5d}  {float(r['loss_mean']):.3f}  {float(r['esti_sensitivity']):8.3f}  "
              f"{float(r['real_sensitivity']):6.3f}  {float(r['delta_l']):.4f}  {float(r['delta_sbar']):.4f}")

# the same run without privacy, for comparison
plain = run_experiment(cfg.with_updates(privacy={"enabled": False}), write=False)
print(f"final accuracy with noise {result.summary.final_acc:.3f}, without {plain.summary.final_acc:.3f}")
