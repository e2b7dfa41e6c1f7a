import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from mass.estimators import (InfoNceConfig, MineEstimator, StatisticsNet, brute_force_mi,
                             ce_mi_estimate, frozen_classifier_error, infonce_batch,
                             infonce_loss, infonce_loss_dual, mine_estimate, score_matrix)
from mass.joint import DiscreteJoint
from mass.networks import FeatureNet


def bayes_samples(joint, n, rng):
    """Sample (x', s) pairs and return the exact posterior row for each."""
    flat = joint.probabilities.ravel()
    cells = rng.choice(flat.size, size=n, p=flat)
    xs, ss = np.unravel_index(cells, joint.shape)
    post = joint.conditional("S", "X'")
    return post[xs], ss


class TestBruteForce:
    def test_two_by_two(self):
        j = DiscreteJoint(("A", "B"), np.array([[0.4, 0.1], [0.1, 0.4]]))
        # 0.8 ln 1.6 + 0.2 ln 0.4
        assert brute_force_mi(j, "A", "B") == pytest.approx(0.1927, abs=5e-5)

    def test_product_is_zero(self, rng):
        j = DiscreteJoint(("A", "B"), np.outer(rng.dirichlet(np.ones(3)), rng.dirichlet(np.ones(4))))
        assert abs(brute_force_mi(j, "A", "B")) < 1e-12

    def test_identical_uniform(self):
        j = DiscreteJoint(("A", "B"), np.eye(5) / 5)
        assert brute_force_mi(j, "A", "B") == pytest.approx(math.log(5), abs=1e-12)

    def test_symmetric(self, rng):
        j = DiscreteJoint.random(("A", "B"), (3, 5), rng)
        assert brute_force_mi(j, "A", "B") == pytest.approx(brute_force_mi(j, "B", "A"), abs=1e-14)


class TestCeEstimate:
    def test_perfect(self):
        y = np.array([0, 1, 1, 0])
        est = ce_mi_estimate(np.eye(2)[y], y, math.log(2))
        assert est.value == pytest.approx(math.log(2)) and est.estimator == "ce"

    def test_uniform(self):
        est = ce_mi_estimate(np.full((4, 2), 0.5), [0, 1, 0, 1], math.log(2))
        assert est.value == pytest.approx(0.0, abs=1e-12)

    def test_bayes_posterior_matches_oracle(self, rng):
        j = DiscreteJoint.random(("X'", "S"), (3, 3), rng)
        probs, s = bayes_samples(j, 1_000_000, rng)
        est = ce_mi_estimate(probs, s, j.entropy("S"))
        assert est.value == pytest.approx(brute_force_mi(j, "X'", "S"), abs=1e-3)

    def test_floor_counts(self, caplog):
        est = ce_mi_estimate(np.array([[1.0, 0.0], [0.5, 0.5]]), [1, 0], math.log(2))
        assert est.clamped == 1
        assert est.value == pytest.approx(math.log(2) - (-math.log(1e-12) + math.log(2)) / 2)

    def test_may_be_negative(self):
        est = ce_mi_estimate(np.array([[0.1, 0.9]]), [0], math.log(2))
        assert est.value < 0

    def test_rejects_non_probabilities(self):
        with pytest.raises(ValueError):
            ce_mi_estimate(np.array([[0.7, 0.7]]), [0], 0.5)


class TestInfoNce:
    def test_equal_scores(self):
        k = 7
        a = torch.ones(4, 3)
        loss, est = infonce_loss(a, a, torch.ones(4, k, 3), temperature=0.1)
        assert loss.item() == pytest.approx(math.log(k + 1), abs=1e-6)
        assert est.value == pytest.approx(0.0, abs=1e-6)

    def test_perfect_discrimination(self):
        a = torch.tensor([[1.0, 0.0]])
        neg = torch.tensor([[[-1.0, 0.0]] * 3])
        loss, est = infonce_loss(a, a, neg, temperature=0.01)
        assert loss.item() < 1e-6
        assert est.value == pytest.approx(math.log(4), abs=1e-6)

    def test_zero_norm(self):
        with pytest.raises(ValueError, match="zero-norm"):
            infonce_batch(torch.zeros(3, 2), torch.ones(3, 2))

    def test_symmetric_scores_dual(self, rng):
        v = torch.tensor(rng.standard_normal((6, 4)), dtype=torch.float32)
        s = score_matrix(v, v, 0.5)
        assert torch.allclose(s, s.T, atol=1e-6)
        l_f, _ = infonce_batch(v, v, 0.5, "feature_space")
        l_x, _ = infonce_batch(v, v, 0.5, "transformed_space")
        dual, _ = infonce_loss_dual(v, v, 0.5)
        assert l_f.item() == pytest.approx(l_x.item(), abs=1e-6)
        assert dual.item() == pytest.approx(l_f.item(), abs=1e-6)

    def test_two_sample_by_hand(self):
        f = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        h = torch.tensor([[1.0, 1.0], [0.0, 1.0]])
        tau = 0.5
        c = 1 / math.sqrt(2)
        cos = [[c, 0.0], [c, 1.0]]              # cos(f_i, h_j)
        e = [[math.exp(v / tau) for v in row] for row in cos]
        l_f = -0.5 * (math.log(e[0][0] / (e[0][0] + e[0][1]))
                      + math.log(e[1][1] / (e[1][0] + e[1][1])))
        l_x = -0.5 * (math.log(e[0][0] / (e[0][0] + e[1][0]))
                      + math.log(e[1][1] / (e[0][1] + e[1][1])))
        dual, est = infonce_loss_dual(f, h, tau)
        assert dual.item() == pytest.approx((l_f + l_x) / 2, abs=1e-6)
        assert est.value == pytest.approx(max(0.0, math.log(2) - (l_f + l_x) / 2), abs=1e-6)

    def test_deterministic(self, rng):
        f = torch.tensor(rng.standard_normal((8, 3)), dtype=torch.float32)
        h = torch.tensor(rng.standard_normal((8, 3)), dtype=torch.float32)
        assert infonce_loss_dual(f, h)[0].item() == infonce_loss_dual(f, h)[0].item()

    def test_config_validation(self):
        with pytest.raises(ValueError):
            InfoNceConfig(temperature=0.0)
        with pytest.raises(ValueError):
            InfoNceConfig(anchor_side="sideways")

    def test_correlated_gaussian(self):
        rho = 0.9
        true = -0.5 * math.log(1 - rho ** 2)
        g = np.random.default_rng(0)

        def sample(n):
            a = g.standard_normal(n)
            b = rho * a + math.sqrt(1 - rho ** 2) * g.standard_normal(n)
            return (torch.tensor(a[:, None], dtype=torch.float32),
                    torch.tensor(b[:, None], dtype=torch.float32))

        torch.manual_seed(0)
        na, nb = FeatureNet(1, 16, 64), FeatureNet(1, 16, 64)
        opt = torch.optim.Adam(list(na.parameters()) + list(nb.parameters()), lr=1e-3)
        a, b = sample(128 * 100)
        for _ in range(5):
            perm = torch.randperm(len(a))
            for i in range(0, len(a), 128):
                idx = perm[i:i + 128]
                loss, _ = infonce_batch(na(a[idx]), nb(b[idx]), 0.1)
                opt.zero_grad()
                loss.backward()
                opt.step()
        a, b = sample(128 * 40)
        with torch.no_grad():
            vals = [infonce_batch(na(a[i:i + 128]), nb(b[i:i + 128]), 0.1)[1].value
                    for i in range(0, len(a), 128)]
        assert 0.5 * true <= np.mean(vals) <= true + 0.1


class TestMine:
    def _train(self, kind, steps=1000):
        torch.manual_seed(0)
        g = torch.Generator().manual_seed(0)
        net = StatisticsNet(4, 4, 64) if kind == "same" else StatisticsNet(1, 1, 64)
        est = MineEstimator(net, 0.99)
        opt = torch.optim.Adam(net.parameters(), lr=1e-3)

        def batch(n):
            if kind == "same":
                a = F.one_hot(torch.randint(0, 4, (n,), generator=g), 4).float()
                return a, a
            return torch.randn(n, 1, generator=g), torch.randn(n, 1, generator=g)

        for _ in range(steps):
            a, b = batch(256)
            loss, _ = est.loss(a, b, b[torch.randperm(256, generator=g)])
            opt.zero_grad()
            loss.backward()
            opt.step()
        a, b = batch(20000)
        return mine_estimate(net, a, b, b[torch.randperm(20000, generator=g)]).value

    def test_independent(self):
        assert abs(self._train("indep")) < 0.05

    def test_identical_four_classes(self):
        v = self._train("same")
        assert math.log(4) - 0.1 < v < math.log(4)

    def test_constant_statistic(self):
        net = StatisticsNet(2, 2)
        for p in net.parameters():
            torch.nn.init.zeros_(p)
        a, b = torch.randn(50, 2), torch.randn(50, 2)
        assert mine_estimate(net, a, b, b.flip(0)).value == pytest.approx(0.0, abs=1e-7)

    def test_overflow_clipped(self, caplog):
        net = StatisticsNet(1, 1)
        torch.nn.init.constant_(net.net[-1].bias, 200.0)
        est = MineEstimator(net, max_log_denominator=50.0)
        loss, _ = est.loss(torch.randn(8, 1), torch.randn(8, 1), torch.randn(8, 1))
        assert est.overflow_count == 1 and torch.isfinite(loss)


class TestFrozenClassifier:
    def test_exact_predictor(self, rng):
        j = DiscreteJoint.random(("X'", "U"), (4, 3), rng)
        r = frozen_classifier_error(j, j.conditional("U", "X'"))
        assert r.gap == pytest.approx(0.0, abs=1e-12) and r.expected_kl == pytest.approx(0.0, abs=1e-12)

    def test_identity_random(self, rng):
        for _ in range(50):
            j = DiscreteJoint.random(("X'", "U"), (3, 3), rng)
            q = rng.dirichlet(np.ones(3), size=3)
            r = frozen_classifier_error(j, q)
            assert r.gap == pytest.approx(r.expected_kl, abs=1e-9)

    def test_zero_mass(self):
        j = DiscreteJoint(("X'", "U"), np.full((2, 2), 0.25))
        r = frozen_classifier_error(j, np.array([[1.0, 0.0], [0.5, 0.5]]))
        assert math.isinf(r.expected_kl)
