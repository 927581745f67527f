"""A small multiplier grid, swept and reduced to its rate-optimal models.

Trains a 3x3 grid of models (short runs, so this stays desk-scale even
for a demo), writes the runs table, and selects the upper convex hull of
(total rate, reconstruction quality) points: the models that are best
for some range of total rate.
"""

import os
import tempfile

from hitlab import FrontierPoint, best_per_interval, upper_convex_hull
from hitlab.sweep import run_sweep, write_runs_csv

doc = {
    "seed": 77,
    "dataset": {"kind": "mixture", "classes": 4, "dim": 8, "separation": 3.0,
                "n_train": 1024, "n_eval": 1024, "seed": 11, "entropy_mc": 10_000},
    "model": {"data_dim": 8, "latent_dims": [4, 2], "hidden": [16]},
    "train": {"steps": 600, "batch_size": 128, "eval_interval": 200},
    "grid": {"axes": [{"min": 0.1, "max": 10.0, "count": 3, "log": True},
                      {"min": 0.1, "max": 10.0, "count": 3, "log": True}]},
    "eval": {"n_generate": 256},
}

records = run_sweep(doc, jobs=1)
print("grid results (beta_2, beta_1 -> R_z2, R_z1|z2, psnr):")
for rec in records:
    m = rec.metrics
    print(f"  ({rec.beta_top:>5.2f}, {rec.beta_bottom:>5.2f}) -> "
          f"{m.layer_rates[0]:6.3f}, {m.layer_rates[1]:6.3f}, {m.psnr:6.2f} dB")

with tempfile.TemporaryDirectory() as td:
    path = os.path.join(td, "runs.csv")
    write_runs_csv(records, path)
    print(f"\nruns table: {os.path.getsize(path)} bytes at {path}")

points = [
    FrontierPoint((rec.grid_i, rec.grid_j), rec.metrics.total_rate, rec.metrics.psnr)
    for rec in records if rec.status == "ok"
]
hull = upper_convex_hull(points)
print("\nupper hull of (total rate, psnr):")
for p in hull:
    print(f"  cell {p.run_id}: R = {p.x:.3f} nats, psnr = {p.y:.2f} dB")

print("\nbest model per total-rate interval:")
for iv in best_per_interval(points, hull):
    print(f"  [{iv.lo:8.3f}, {iv.hi:8.3f}] -> cell {iv.run_id}")
