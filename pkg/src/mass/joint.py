"""Finite joint distributions and exact information quantities.

Everything here works by dense summation over an explicit probability
table, so it is only meant for small cardinalities.  These routines are
the oracle side of the package: the learned estimators are checked
against them.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

MASS_TOL = 1e-12


def _as_tuple(axes: str | Iterable[str]) -> tuple[str, ...]:
    if isinstance(axes, str):
        return (axes,)
    return tuple(axes)


def _xlogx_ratio(p: np.ndarray, q: np.ndarray) -> float:
    """sum p * ln(p / q) with the 0 ln 0 = 0 convention."""
    mask = p > 0
    if np.any(q[mask] <= 0):
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


@dataclass(frozen=True)
class DiscreteJoint:
    """Dense joint probability table with one named axis per variable."""

    axis_names: tuple[str, ...]
    probabilities: np.ndarray

    def __post_init__(self):
        names = tuple(self.axis_names)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate axis names: {names}")
        if probs.ndim != len(names):
            raise ValueError(
                f"table has {probs.ndim} dims but {len(names)} axis names")
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise ValueError("probabilities must be finite and nonnegative")
        total = probs.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total mass is {total!r}, expected 1")
        probs = probs.copy()
        probs.setflags(write=False)
        object.__setattr__(self, "axis_names", names)
        object.__setattr__(self, "probabilities", probs)

    @classmethod
    def from_counts(cls, axis_names: Sequence[str], counts) -> "DiscreteJoint":
        counts = np.asarray(counts, dtype=np.float64)
        probs = counts / counts.sum()
        # renormalise once more so the mass check survives float round-off
        return cls(tuple(axis_names), probs / probs.sum())

    @classmethod
    def random(cls, axis_names: Sequence[str], shape: Sequence[int],
               rng: np.random.Generator, concentration: float = 1.0) -> "DiscreteJoint":
        """Draw a table from a symmetric Dirichlet over all cells."""
        flat = rng.dirichlet(np.full(int(np.prod(shape)), concentration))
        probs = flat.reshape(tuple(shape))
        return cls(tuple(axis_names), probs / probs.sum())

    @property
    def shape(self) -> tuple[int, ...]:
        return self.probabilities.shape

    def cardinality(self, axis: str) -> int:
        return self.shape[self.axis_index(axis)]

    def axis_index(self, axis: str) -> int:
        try:
            return self.axis_names.index(axis)
        except ValueError:
            raise KeyError(f"unknown axis {axis!r}; have {self.axis_names}") from None

    def marginal(self, axes: str | Iterable[str]) -> "DiscreteJoint":
        """Joint of ``axes`` (in the given order) with everything else summed out."""
        keep = _as_tuple(axes)
        idx = [self.axis_index(a) for a in keep]
        drop = tuple(i for i in range(len(self.axis_names)) if i not in idx)
        table = self.probabilities.sum(axis=drop) if drop else self.probabilities
        # summed table has kept axes in original order; permute to requested order
        remaining = [i for i in range(len(self.axis_names)) if i in idx]
        perm = [remaining.index(i) for i in idx]
        table = np.transpose(table, perm)
        return DiscreteJoint(keep, table / table.sum())

    def marginal_table(self, axes: str | Iterable[str]) -> np.ndarray:
        return self.marginal(axes).probabilities

    def conditional(self, target: str | Iterable[str],
                    given: str | Iterable[str]) -> np.ndarray:
        """P(target | given) with ``given`` axes first; rows with zero mass are left as 0."""
        target, given = _as_tuple(target), _as_tuple(given)
        joint = self.marginal_table(given + target)
        norm = self.marginal_table(given)
        norm = norm.reshape(norm.shape + (1,) * len(target))
        with np.errstate(invalid="ignore", divide="ignore"):
            cond = np.where(norm > 0, joint / np.where(norm > 0, norm, 1.0), 0.0)
        return cond

    def entropy(self, axes: str | Iterable[str] | None = None) -> float:
        table = self.probabilities if axes is None else self.marginal_table(axes)
        p = table[table > 0]
        return float(-np.sum(p * np.log(p)))

    def conditional_entropy(self, target: str | Iterable[str],
                            given: str | Iterable[str]) -> float:
        target, given = _as_tuple(target), _as_tuple(given)
        return self.entropy(target + given) - self.entropy(given)

    def mutual_information(self, a: str | Iterable[str], b: str | Iterable[str],
                           given: str | Iterable[str] | None = None) -> float:
        """I(a; b) or I(a; b | given), by direct summation of p ln(p / (p_a p_b))."""
        a, b = _as_tuple(a), _as_tuple(b)
        if given is None:
            pab = self.marginal_table(a + b)
            pa = self.marginal_table(a).reshape(pab.shape[:len(a)] + (1,) * len(b))
            pb = self.marginal_table(b).reshape((1,) * len(a) + pab.shape[len(a):])
            return _xlogx_ratio(pab, np.broadcast_to(pa * pb, pab.shape))
        c = _as_tuple(given)
        pabc = self.marginal_table(c + a + b)
        nc, na = len(c), len(a)
        pc = self.marginal_table(c).reshape(pabc.shape[:nc] + (1,) * (len(a) + len(b)))
        pac = self.marginal_table(c + a).reshape(pabc.shape[:nc + na] + (1,) * len(b))
        pbc = self.marginal_table(c + b).reshape(
            pabc.shape[:nc] + (1,) * na + pabc.shape[nc + na:])
        with np.errstate(invalid="ignore", divide="ignore"):
            ref = np.where(pc > 0, pac * pbc / np.where(pc > 0, pc, 1.0), 0.0)
        return _xlogx_ratio(pabc, np.broadcast_to(ref, pabc.shape))

    def with_channel(self, source: str, channel, name: str) -> "DiscreteJoint":
        """Append a new axis ``name`` drawn from ``source`` through a row-stochastic matrix.

        The new variable depends on the rest only through ``source``, which
        is the X -> X' link of the transformation.
        """
        channel = np.asarray(channel, dtype=np.float64)
        k = self.axis_index(source)
        if channel.ndim != 2 or channel.shape[0] != self.shape[k]:
            raise ValueError(
                f"channel must have shape ({self.shape[k]}, n); got {channel.shape}")
        if np.any(channel < 0) or not np.allclose(channel.sum(axis=1), 1.0, atol=1e-12):
            raise ValueError("channel rows must be probability vectors")
        bshape = [1] * self.probabilities.ndim + [channel.shape[1]]
        bshape[k] = channel.shape[0]
        table = self.probabilities[..., None] * channel.reshape(bshape)
        return DiscreteJoint(self.axis_names + (name,), table / table.sum())


def random_channel(n_in: int, n_out: int, rng: np.random.Generator,
                   concentration: float = 1.0) -> np.ndarray:
    """Row-stochastic matrix with Dirichlet rows."""
    return rng.dirichlet(np.full(n_out, concentration), size=n_in)
