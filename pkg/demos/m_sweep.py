"""
Loosening the suppression budget
================================

Raising m lets some information about S through.  A retrained attacker
should do gradually better as m grows.  Writes a small PNG next to the
run directories.  About two minutes.
"""
import torch

from mass.evaluation import plot_sweep
from mass.scenario import ScenarioConfig, default_output_root, run_scenario

torch.set_num_threads(1)

root = default_output_root() / "demo_sweep"
ms = [0.0, 0.2, 0.4]
reports = []
for m in ms:
    cfg = ScenarioConfig.acceptance(seed=0, m=m, output_dir=str(root / f"m{m}"))
    reports.append(run_scenario(cfg).metrics)
    e = reports[-1].get("S", "retrained")
    print(f"m = {m}: retrained acc(S) {e.acc:.4f}  NAG {e.nag:.4f}")

print(plot_sweep(ms, reports, "S", "retrained", root / "sweep.png"))
