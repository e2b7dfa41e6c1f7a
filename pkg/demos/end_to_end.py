"""
Hide S, keep U, and see what survives
=====================================

The synthetic scenario: S is binary, U has four classes and is not
annotated during training, and a latent 8-class F mixes both.  The
transform has to make S unpredictable while the contrastive term keeps
as much of everything else as it can.  Takes about half a minute.
"""
import torch

from mass.scenario import ScenarioConfig, default_output_root, run_scenario

torch.set_num_threads(1)

cfg = ScenarioConfig.acceptance(seed=0, output_dir=str(default_output_root() / "demo_e2e"))
res = run_scenario(cfg)

print(res.feasibility.to_json())
print(res.metrics.table())

# Retrained NAG near 0 means a fresh attacker does no better than guessing.
s = res.metrics.get("S", "retrained")
u = res.metrics.get("U", "tuned")
print(f"NAG(S) = {s.nag:.3f}   NAG(U) = {u.nag:.3f}")
print("final suppression slack:", res.train_report["attributes"]["S"]["slack"])
print("artifacts in", res.output_dir)
