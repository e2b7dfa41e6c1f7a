"""Plug-in entropies, feasibility auditing and reference accuracies.

The feasibility test uses the degenerate-label form of the constraints:
a (m, n) configuration can only be met if, for every sensitive S and
useful U,

    n_U <= m_S + H(U | S),   n_U <= H(U),   m_S >= 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .joint import DiscreteJoint


def _counts(labels, cardinality: int | None = None) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label column")
    if labels.min() < 0 or (cardinality is not None and labels.max() >= cardinality):
        raise ValueError("labels out of range")
    return np.bincount(labels.astype(np.int64), minlength=cardinality or 0)


def _entropy_of_counts(counts: np.ndarray) -> float:
    counts = counts[counts > 0].astype(np.float64)
    p = counts / counts.sum()
    return float(-np.sum(p * np.log(p)))


def empirical_entropy(labels, cardinality: int | None = None) -> float:
    """Plug-in Shannon entropy of an integer label column, in nats."""
    return _entropy_of_counts(_counts(labels, cardinality))


def empirical_conditional_entropy(labels_u, labels_s, cardinality_u: int | None = None,
                                  cardinality_s: int | None = None) -> float:
    """Plug-in H(U | S) = sum_s p(s) H(U | S = s)."""
    u, s = np.asarray(labels_u), np.asarray(labels_s)
    if u.shape != s.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {s.shape}")
    cu = cardinality_u or int(_counts(u).size)
    cs = cardinality_s or int(_counts(s).size)
    _counts(u, cu), _counts(s, cs)
    table = np.zeros((cs, cu))
    np.add.at(table, (s.astype(np.int64), u.astype(np.int64)), 1.0)
    n = table.sum()
    return float(sum(row.sum() / n * _entropy_of_counts(row)
                     for row in table if row.sum() > 0))


def empirical_joint(columns: Mapping[str, np.ndarray],
                    cardinalities: Mapping[str, int]) -> DiscreteJoint:
    """Empirical distribution of several label columns as a DiscreteJoint."""
    names = list(columns)
    shape = tuple(int(cardinalities[n]) for n in names)
    table = np.zeros(shape)
    np.add.at(table, tuple(np.asarray(columns[n], dtype=np.int64) for n in names), 1.0)
    return DiscreteJoint.from_counts(names, table)


def guessing_accuracy(labels) -> float:
    """Accuracy of always predicting the most frequent class."""
    counts = _counts(labels)
    return float(counts.max() / counts.sum())


@dataclass
class ConstraintConfig:
    """Suppression budgets m (nats), preservation floors n (nats), penalty weight."""

    m: dict[str, float] = field(default_factory=dict)
    n: dict[str, float] = field(default_factory=dict)
    lam: float = 1.0

    def __post_init__(self):
        for kind, table in (("m", self.m), ("n", self.n)):
            for k, v in table.items():
                if not math.isfinite(v) or v < 0:
                    raise ValueError(f"{kind}[{k!r}] = {v} must be finite and nonnegative")
        if not math.isfinite(self.lam) or self.lam < 0:
            raise ValueError("lambda must be finite and nonnegative")
        overlap = set(self.m) & set(self.n)
        if overlap:
            raise ValueError(f"attributes both suppressed and preserved: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {"m": dict(self.m), "n": dict(self.n), "lambda": self.lam}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConstraintConfig":
        return cls(m={k: float(v) for k, v in d.get("m", {}).items()},
                   n={k: float(v) for k, v in d.get("n", {}).items()},
                   lam=float(d.get("lambda", d.get("lam", 1.0))))


@dataclass
class FeasibilityReport:
    # (sensitive, useful) -> n - m - H(U|S); positive means violated
    slacks: dict[tuple[str, str], float]
    conditional_entropies: dict[tuple[str, str], float]
    ceilings: dict[str, float]
    m: dict[str, float]
    n: dict[str, float]
    violations: list[str]

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def verdict(self) -> str:
        return "feasible" if self.feasible else "infeasible"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "m": self.m,
            "n": self.n,
            "ceilings": self.ceilings,
            "pairs": [
                {"sensitive": s, "useful": u,
                 "conditional_entropy": self.conditional_entropies[(s, u)],
                 "slack": self.slacks[(s, u)]}
                for (s, u) in self.slacks
            ],
            "violations": self.violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def _train_labels(dataset, name: str) -> np.ndarray:
    if name not in dataset.labels:
        raise KeyError(f"attribute {name!r} is not in the dataset")
    return dataset.labels[name][dataset.train_index]


def _cardinality(dataset, name: str) -> int:
    return dataset.manifest.attribute(name).cardinality


def audit_constraints(config: ConstraintConfig,
                      conditional_entropies: Mapping[tuple[str, str], float],
                      ceilings: Mapping[str, float]) -> FeasibilityReport:
    """Evaluate the feasibility inequalities from precomputed entropies.

    ``conditional_entropies[(s, u)]`` is H(U|S) and ``ceilings[u]`` is H(U).
    Boundary equality counts as feasible; there is no tolerance.
    """
    cond, slacks, violations = {}, {}, []
    for s, m in config.m.items():
        if m < 0:
            violations.append(f"m[{s}] = {m} < 0")
    for u, n in config.n.items():
        if n > ceilings[u]:
            violations.append(f"n[{u}] = {n:.6g} exceeds H({u}) = {ceilings[u]:.6g}")
        for s, m in config.m.items():
            h = float(conditional_entropies[(s, u)])
            cond[(s, u)] = h
            slacks[(s, u)] = n - m - h
            if slacks[(s, u)] > 0:
                violations.append(
                    f"n[{u}] = {n:.6g} > m[{s}] + H({u}|{s}) = {m + h:.6g} "
                    f"(slack {slacks[(s, u)]:+.6g})")
    return FeasibilityReport(slacks, cond, {u: float(ceilings[u]) for u in config.n},
                             dict(config.m), dict(config.n), violations)


def check_feasibility(config: ConstraintConfig, dataset) -> FeasibilityReport:
    """Audit (m, n) against plug-in entropies of the training split."""
    for s in config.m:
        _train_labels(dataset, s)
    ceilings, cond = {}, {}
    for u in config.n:
        lu = _train_labels(dataset, u)
        cu = _cardinality(dataset, u)
        ceilings[u] = empirical_entropy(lu, cu)
        for s in config.m:
            cond[(s, u)] = empirical_conditional_entropy(
                lu, _train_labels(dataset, s), cu, _cardinality(dataset, s))
    return audit_constraints(config, cond, ceilings)


def preservation_ceiling(entropy_u: float, conditional_entropies: Mapping[str, float],
                         m: Mapping[str, float]) -> float:
    """min(H(U), min_s (m_s + H(U|S=s))) from precomputed entropies."""
    floor = float(entropy_u)
    for s, h in conditional_entropies.items():
        if m[s] < 0:
            raise ValueError(f"m[{s}] must be nonnegative")
        floor = min(floor, m[s] + h)
    return floor


def max_preservation_floor(attribute: str, config: ConstraintConfig, dataset) -> float:
    """Largest feasible n for ``attribute`` given the budgets in ``config.m``."""
    lu = _train_labels(dataset, attribute)
    cu = _cardinality(dataset, attribute)
    cond = {s: empirical_conditional_entropy(lu, _train_labels(dataset, s), cu,
                                             _cardinality(dataset, s))
            for s in config.m}
    return preservation_ceiling(empirical_entropy(lu, cu), cond, config.m)


def objective_upper_bound(joint: DiscreteJoint, sensitive: str, m: float,
                          data_axis: str = "X") -> float:
    """H(X | S) + m, the ceiling on I(X'; F) for any admissible transform.

    Only defined on an explicit discrete joint; continuous data has no
    plug-in value for H(X | S).
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    return joint.conditional_entropy(data_axis, sensitive) + m
