"""
Three ways to estimate mutual information
=========================================

Exact summation on a table, a classifier's cross-entropy, and a trained
contrastive critic.  The last two are what training actually uses.
"""
import math

import numpy as np
import torch

from mass import DiscreteJoint, FeatureNet, brute_force_mi, ce_mi_estimate, infonce_batch

torch.set_num_threads(1)
rng = np.random.default_rng(0)

# Exact value on a 2 x 2 table
j = DiscreteJoint(("A", "B"), np.array([[0.4, 0.1], [0.1, 0.4]]))
print("brute force I(A;B) =", round(brute_force_mi(j, "A", "B"), 4))

# A classifier that outputs the true posterior gives H(S) - CE = I(X';S)
j = DiscreteJoint.random(("X'", "S"), (3, 3), rng)
cells = rng.choice(9, size=200_000, p=j.probabilities.ravel())
xs, ss = np.unravel_index(cells, (3, 3))
est = ce_mi_estimate(j.conditional("S", "X'")[xs], ss, j.entropy("S"))
exact = brute_force_mi(j, "X'", "S")
print(f"cross-entropy estimate {est.value:.4f} vs exact {exact:.4f}")

# InfoNCE on a correlated Gaussian pair; the estimate is a lower bound
# capped at ln(batch size)
rho = 0.9
true = -0.5 * math.log(1 - rho ** 2)


def sample(n):
    a = rng.standard_normal(n)
    b = rho * a + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    return (torch.tensor(a[:, None], dtype=torch.float32),
            torch.tensor(b[:, None], dtype=torch.float32))


torch.manual_seed(0)
na, nb = FeatureNet(1, 16, 64), FeatureNet(1, 16, 64)
opt = torch.optim.Adam([*na.parameters(), *nb.parameters()], lr=1e-3)
for step in range(400):
    a, b = sample(128)
    loss, est = infonce_batch(na(a), nb(b), 0.1)
    opt.zero_grad()
    loss.backward()
    opt.step()
    if step % 100 == 0:
        print(f"step {step:3d}  batch estimate {est.value:.3f}")

a, b = sample(128 * 20)
with torch.no_grad():
    vals = [infonce_batch(na(a[i:i + 128]), nb(b[i:i + 128]), 0.1)[1].value
            for i in range(0, len(a), 128)]
print(f"held-out InfoNCE {np.mean(vals):.3f}, true {true:.3f}, cap ln 128 = {math.log(128):.3f}")
