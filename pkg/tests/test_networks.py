import math

import numpy as np
import pytest
import torch

from mass.data import SyntheticSpec, encode_tabular, generate_synthetic
from mass.estimators import infonce_batch
from mass.joint import DiscreteJoint
from mass.networks import (ClassifierNet, FeatureNet, TransformerNet, accuracy, classify,
                           copy_network, gumbel_softmax_output, load_checkpoint,
                           pretrain_classifier, pretrain_feature_extractor, save_checkpoint,
                           transform)

from conftest import toy_gradient_check


class TestTransformer:
    def test_identity_init(self):
        x = torch.randn(10, 5)
        tr = TransformerNet(5)
        assert torch.equal(transform(x, tr, seed=3), x)

    def test_shape_and_determinism(self):
        torch.manual_seed(0)
        tr = TransformerNet(4, noise_dim=2, identity_init=False)
        x = torch.randn(7, 4)
        a, b = transform(x, tr, seed=1), transform(x, tr, seed=1)
        assert a.shape == x.shape and torch.equal(a, b)
        assert not torch.equal(a, transform(x, tr, seed=2))
        assert transform(x, tr, seed=1).var(0).sum() > 0

    def test_non_finite(self):
        with pytest.raises(ValueError):
            transform(np.array([[np.nan, 0.0]]), TransformerNet(2))

    def test_categorical_blocks(self):
        torch.manual_seed(0)
        tr = TransformerNet(5, identity_init=False, categorical_blocks=[slice(1, 4)])
        out = transform(torch.randn(20, 5), tr, seed=0, hard=True)
        block = out[:, 1:4]
        assert torch.all((block == 0) | (block == 1))
        assert torch.all(block.sum(1) == 1)


class TestGumbel:
    def test_soft_sums(self):
        z = torch.randn(30, 6)
        y = gumbel_softmax_output(z, [slice(0, 2), slice(3, 6)], 0.7)
        torch.testing.assert_close(y[:, 0:2].sum(1), torch.ones(30))
        torch.testing.assert_close(y[:, 3:6].sum(1), torch.ones(30))
        torch.testing.assert_close(y[:, 2], z[:, 2])

    def test_low_temperature_is_one_hot(self):
        y = gumbel_softmax_output(torch.randn(50, 4), [slice(0, 4)], 1e-4)
        assert torch.allclose(y.max(1).values, torch.ones(50), atol=1e-4)

    def test_hard_straight_through(self):
        z = torch.randn(5, 3, requires_grad=True)
        y = gumbel_softmax_output(z, [slice(0, 3)], 0.5, hard=True)
        assert torch.all(y.sum(1) == 1)
        (y * torch.arange(3.0)).sum().backward()
        assert z.grad is not None and torch.any(z.grad != 0)

    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            gumbel_softmax_output(torch.zeros(1, 2), [slice(0, 2)], 0.0)

    def test_decode_round_trip(self):
        table = {"c": ["a", "b", "c", "a"], "v": [0.0, 1.0, 0.5, 0.2]}
        x, _, enc = encode_tabular(table, {"c": "categorical", "v": "continuous"})
        y = gumbel_softmax_output(torch.randn(4, enc.width), enc.categorical_blocks, 0.5, hard=True)
        decoded = enc.inverse_transform(y.detach().numpy())
        assert set(decoded["c"]) <= {"a", "b", "c"}


class TestClassifier:
    def test_zero_output_uniform(self):
        clf = ClassifierNet(3, 4).zero_output()
        torch.testing.assert_close(classify(torch.randn(5, 3), clf), torch.full((5, 4), 0.25))

    def test_rows_normalised(self):
        p = classify(torch.randn(100, 3) * 10, ClassifierNet(3, 5))
        assert torch.allclose(p.sum(1), torch.ones(100), atol=1e-6)

    def test_non_finite_logits(self):
        clf = ClassifierNet(2, 2)
        torch.nn.init.constant_(clf.net[-1].bias, float("nan"))
        with pytest.raises(FloatingPointError):
            classify(torch.zeros(1, 2), clf)

    def test_pretrain_clean_data(self):
        p = np.full((2, 3), 1 / 6)
        ds, _ = generate_synthetic(SyntheticSpec(DiscreteJoint(("S", "U"), p), 2000, seed=0,
                                                 noise_scale=0.01,
                                                 roles={"S": "sensitive", "U": "useful"}))
        x, y = ds.split("train")
        clf, hist = pretrain_classifier(x, y["U"], 3, epochs=10)
        assert accuracy(x, y["U"], clf) > 0.99
        xe, ye = ds.split("eval")
        assert accuracy(xe, ye["U"], clf) >= 0.99
        assert hist[-1] < hist[0]

    def test_copy_is_exact(self):
        clf = ClassifierNet(3, 2)
        dup = copy_network(clf, role="collaborator")
        assert dup.role == "collaborator"
        for a, b in zip(clf.parameters(), dup.parameters()):
            assert torch.equal(a, b) and a.data_ptr() != b.data_ptr()

    def test_warns_when_loss_does_not_fall(self, caplog):
        clf = ClassifierNet(2, 2)
        x, y = np.zeros((64, 2)), np.zeros(64, dtype=int)
        from mass.networks import train_classifier
        train_classifier(clf, x, y, epochs=3, lr=0.0)
        assert "did not decrease" in caplog.text


class TestFeatureExtractor:
    def test_pretraining_beats_trivial(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2048, 6))
        net, hist = pretrain_feature_extractor(x, epochs=5, batch_size=128, seed=0)
        held = torch.tensor(rng.standard_normal((512, 6)), dtype=torch.float32)
        with torch.no_grad():
            losses = [infonce_batch(net(held[i:i + 128]), net(held[i:i + 128]), 0.1)[0].item()
                      for i in range(0, 512, 128)]
        assert np.mean(losses) < math.log(128) - 0.1
        assert hist[-1] < hist[0]

    def test_seeded(self):
        x = np.random.default_rng(1).standard_normal((256, 3))
        a, _ = pretrain_feature_extractor(x, epochs=2, seed=7)
        b, _ = pretrain_feature_extractor(x, epochs=2, seed=7)
        for p, q in zip(a.parameters(), b.parameters()):
            assert torch.equal(p, q)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        torch.manual_seed(0)
        mods = {"transformer": TransformerNet(3, identity_init=False), "clf": ClassifierNet(3, 2),
                "feature": FeatureNet(3, 8)}
        save_checkpoint(tmp_path, mods, {"epoch": 4})
        back, meta, _ = load_checkpoint(tmp_path)
        assert meta["epoch"] == 4
        x, a = torch.randn(5, 3), torch.randn(5, 3)
        assert torch.equal(mods["transformer"](x, a), back["transformer"](x, a))
        assert torch.equal(mods["clf"](x), back["clf"](x))
        assert torch.equal(mods["feature"](x), back["feature"](x))


def test_gradient_matches_finite_differences():
    analytic, numeric = toy_gradient_check()
    rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
    assert rel < 1e-3
