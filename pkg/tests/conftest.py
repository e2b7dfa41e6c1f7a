import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_joint_dataset(n=1200, seed=0, noise=0.3, roles=None):
    """S (2) x U (3) synthetic set used by several module tests."""
    from mass.data import SyntheticSpec, generate_synthetic
    from mass.joint import DiscreteJoint

    p = np.array([[0.20, 0.15, 0.15], [0.10, 0.15, 0.25]])
    spec = SyntheticSpec(DiscreteJoint(("S", "U"), p), sample_count=n, seed=seed,
                         noise_scale=noise,
                         roles=roles or {"S": "sensitive", "U": "useful"})
    return generate_synthetic(spec)[0]


def toy_gradient_check(seed=0, eps=1e-4):
    """Analytic vs central-difference gradient of the total loss w.r.t. theta.

    Two-dimensional features, float64 throughout, one frozen adversary and
    one frozen collaborator.  Returns (analytic, numeric) flat vectors.
    """
    from mass.estimators import infonce_loss_dual
    from mass.losses import preservation_penalty, suppression_penalty, total_loss
    from mass.networks import ClassifierNet, FeatureNet, TransformerNet
    import torch.nn.functional as F

    torch.manual_seed(seed)
    g = torch.Generator().manual_seed(seed)
    tr = TransformerNet(2, hidden=8, identity_init=False).double()
    adv = ClassifierNet(2, 2, hidden=8).double()
    col = ClassifierNet(2, 3, hidden=8).double()
    feat = FeatureNet(2, embed_dim=4, hidden=8).double()
    for p in list(adv.parameters()) + list(col.parameters()) + list(feat.parameters()):
        p.requires_grad_(False)
    x = torch.randn(16, 2, generator=g, dtype=torch.float64)
    a = torch.randn(16, 2, generator=g, dtype=torch.float64)
    s = torch.randint(0, 2, (16,), generator=g)
    u = torch.randint(0, 3, (16,), generator=g)

    def loss():
        xp = tr(x, a)
        contrastive, _ = infonce_loss_dual(feat(x), feat(xp), 0.5)
        # budgets chosen so that both penalties are active
        sp = suppression_penalty(F.cross_entropy(adv(xp), s), 0.0, 5.0)
        pp = preservation_penalty(F.cross_entropy(col(xp), u), 1.0, 0.1)
        return total_loss(contrastive, [sp], [pp], 1.0)

    params = list(tr.parameters())
    tr.zero_grad()
    loss().backward()
    analytic = torch.cat([p.grad.reshape(-1) for p in params]).clone()
    numeric = []
    with torch.no_grad():
        for p in params:
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = loss().item()
                flat[i] = old - eps
                down = loss().item()
                flat[i] = old
                numeric.append((up - down) / (2 * eps))
    return analytic.numpy(), np.array(numeric)
