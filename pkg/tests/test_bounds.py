import math

import numpy as np
import pytest

from mass.bounds import (ConstraintConfig, audit_constraints, check_feasibility,
                         empirical_conditional_entropy, empirical_entropy, guessing_accuracy,
                         max_preservation_floor, objective_upper_bound, preservation_ceiling)
from mass.joint import DiscreteJoint

from conftest import small_joint_dataset


class TestEntropy:
    def test_balanced_binary(self):
        assert empirical_entropy([0, 1] * 50, 2) == pytest.approx(math.log(2), abs=1e-12)

    def test_eighty_twenty(self):
        # -0.8 ln 0.8 - 0.2 ln 0.2
        assert empirical_entropy([0] * 80 + [1] * 20, 2) == pytest.approx(0.500402, abs=1e-6)

    def test_single_class(self):
        assert empirical_entropy([3] * 10, 4) == 0.0

    def test_empty(self):
        with pytest.raises(ValueError):
            empirical_entropy([], 2)

    def test_bounded_by_log_cardinality(self, rng):
        for _ in range(50):
            c = int(rng.integers(2, 8))
            h = empirical_entropy(rng.integers(0, c, 200), c)
            assert 0 <= h <= math.log(c) + 1e-12


class TestConditionalEntropy:
    def test_identical(self):
        s = np.array([0, 1, 2, 1, 0])
        assert empirical_conditional_entropy(s, s, 3, 3) == pytest.approx(0.0, abs=1e-15)

    def test_product_counts(self):
        u = np.tile([0, 1, 2], 4)
        s = np.repeat([0, 1], 6)
        assert empirical_conditional_entropy(u, s, 3, 2) == pytest.approx(
            empirical_entropy(u, 3), abs=1e-12)

    def test_two_by_two_table(self):
        s = np.array([0] * 50 + [1] * 50)
        u = np.array([0] * 40 + [1] * 10 + [0] * 10 + [1] * 40)
        assert empirical_conditional_entropy(u, s, 2, 2) == pytest.approx(0.500402, abs=1e-6)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            empirical_conditional_entropy([0, 1], [0], 2, 2)

    def test_not_above_entropy(self, rng):
        for _ in range(50):
            u, s = rng.integers(0, 4, 60), rng.integers(0, 3, 60)
            assert (empirical_conditional_entropy(u, s, 4, 3)
                    <= empirical_entropy(u, 4) + 1e-12)


class TestFeasibility:
    def test_slack_positive(self):
        r = audit_constraints(ConstraintConfig(m={"S": 0.0}, n={"U": 0.5}),
                              {("S", "U"): 0.3}, {"U": 1.0})
        assert not r.feasible
        assert r.slacks[("S", "U")] == pytest.approx(0.2)
        assert len(r.violations) == 1

    def test_boundary_feasible(self):
        r = audit_constraints(ConstraintConfig(m={"S": 0.0}, n={"U": 0.3}),
                              {("S", "U"): 0.3}, {"U": 1.0})
        assert r.feasible and r.verdict == "feasible"

    def test_above_entropy(self):
        r = audit_constraints(ConstraintConfig(m={"S": 5.0}, n={"U": 1.2}),
                              {("S", "U"): 0.9}, {"U": 1.0})
        assert not r.feasible
        assert any("H(U)" in v for v in r.violations)

    def test_negative_budget_rejected(self):
        with pytest.raises(ValueError):
            ConstraintConfig(m={"S": -0.1})

    def test_unknown_attribute(self):
        ds = small_joint_dataset(200)
        with pytest.raises(KeyError):
            check_feasibility(ConstraintConfig(m={"nope": 0.0}), ds)

    def test_on_dataset(self):
        ds = small_joint_dataset(400)
        floor = max_preservation_floor("U", ConstraintConfig(m={"S": 0.0}), ds)
        ok = check_feasibility(ConstraintConfig(m={"S": 0.0}, n={"U": floor}), ds)
        bad = check_feasibility(ConstraintConfig(m={"S": 0.0}, n={"U": floor + 0.01}), ds)
        assert ok.feasible and not bad.feasible

    def test_report_json(self):
        r = audit_constraints(ConstraintConfig(m={"S": 0.0}, n={"U": 0.5}),
                              {("S", "U"): 0.3}, {"U": 1.0})
        assert '"verdict": "infeasible"' in r.to_json()


class TestPreservationFloor:
    def test_uniform_ten_classes(self):
        digit = np.tile(np.arange(10), 100)
        gender = np.repeat([0, 1], 500)
        h = empirical_conditional_entropy(digit, gender, 10, 2)
        floor = preservation_ceiling(empirical_entropy(digit, 10), {"gender": h}, {"gender": 0.0})
        assert floor == pytest.approx(math.log(10), abs=1e-12)
        assert round(floor, 1) == 2.3

    def test_determined_by_sensitive(self):
        assert preservation_ceiling(1.0, {"S": 0.0}, {"S": 0.0}) == 0.0

    def test_two_sensitive(self):
        assert preservation_ceiling(1.0, {"A": 0.9, "B": 0.2}, {"A": 0.0, "B": 0.4}) == \
            pytest.approx(0.6)
        assert preservation_ceiling(0.5, {"A": 0.9, "B": 0.2}, {"A": 0.0, "B": 0.4}) == 0.5


class TestObjectiveBound:
    def test_bijective(self):
        p = np.diag([0.25, 0.25, 0.5])
        j = DiscreteJoint(("S", "X"), p)
        assert objective_upper_bound(j, "S", 0.0) == pytest.approx(0.0, abs=1e-12)

    def test_independent(self, rng):
        px, ps = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(2))
        j = DiscreteJoint(("S", "X"), np.outer(ps, px))
        assert objective_upper_bound(j, "S", 0.3) == pytest.approx(j.entropy("X") + 0.3)

    def test_channel_sweep(self, rng):
        j = DiscreteJoint.random(("X", "S"), (4, 2), rng)
        for _ in range(1000):
            f_given_x = rng.dirichlet(np.ones(3), size=4)
            jf = j.with_channel("X", f_given_x, "F")
            full = jf.with_channel("X", rng.dirichlet(np.ones(4), size=4), "X'")
            m = full.mutual_information("X'", "S")
            assert full.mutual_information("X'", "F") <= objective_upper_bound(j, "S", m) + 1e-9


def test_guessing_accuracy():
    assert guessing_accuracy([0] * 80 + [1] * 20) == pytest.approx(0.8)
    assert guessing_accuracy(np.arange(10)) == pytest.approx(0.1)
    assert guessing_accuracy([2, 2, 2]) == 1.0
