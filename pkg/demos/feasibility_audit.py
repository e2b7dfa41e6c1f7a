"""
Which constraints can a transform satisfy?
==========================================

Before training anything we can ask whether a suppression budget m and a
preservation floor n are compatible.  Everything here is exact arithmetic
on discrete tables or plug-in entropies of label columns.
"""
import numpy as np

from mass import (ConstraintConfig, DiscreteJoint, check_feasibility, generate_synthetic,
                  max_preservation_floor, objective_upper_bound)
from mass.scenario import acceptance_spec

# A toy joint: binary S, 3-class U, weakly dependent
p = np.array([[0.20, 0.15, 0.15],
              [0.10, 0.15, 0.25]])
joint = DiscreteJoint(("S", "U"), p)
print("H(U)     =", round(joint.entropy("U"), 4))
print("H(U | S) =", round(joint.conditional_entropy("U", "S"), 4))
print("I(S; U)  =", round(joint.mutual_information("S", "U"), 4))

# With m = 0 the floor n(U) can be at most H(U | S)

# The synthetic S/U/F dataset used by the end-to-end demo
ds, _ = generate_synthetic(acceptance_spec(sample_count=5000))
ds = ds.with_roles({"U": "useful"})
for m in (0.0, 0.3):
    cfg = ConstraintConfig(m={"S": m})
    print(f"m = {m}: largest admissible n(U) = {max_preservation_floor('U', cfg, ds):.4f}")

ok = check_feasibility(ConstraintConfig(m={"S": 0.0}, n={"U": 1.0}), ds)
bad = check_feasibility(ConstraintConfig(m={"S": 0.0}, n={"U": 2.0}), ds)
print(ok.to_json())
print(bad.to_json())

# Ceiling on what any transform can keep about the data once S is hidden
x_given = DiscreteJoint(("S", "X"), np.array([[0.3, 0.1, 0.1], [0.05, 0.05, 0.4]]))
for m in (0.0, 0.1, 0.2):
    print(f"m = {m}: I(X'; F) <= {objective_upper_bound(x_given, 'S', m):.4f} nats")
