"""Penalty relaxations of the information constraints and the total objective.

Suppression of S with budget m requires the adversary's cross-entropy to
stay at or above H(S) - m; preservation of U with floor n requires the
collaborator's cross-entropy to stay at or below H(U) - n.  Each signed
violation d is turned into d**2 + |d|.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import torch

Scalar = Union[float, torch.Tensor]


@dataclass
class PenaltyTerm:
    attribute: str | None
    raw_slack: Scalar
    value: Scalar


def _penalty(d: Scalar) -> Scalar:
    if isinstance(d, torch.Tensor):
        return d * d + d.abs()
    return d * d + abs(d)


def suppression_penalty(l_ce: Scalar, m: float, h_s: float,
                        attribute: str | None = None) -> PenaltyTerm:
    """d = min(L_CE + m - H(S), 0); zero once the adversary is held to the budget."""
    raw = l_ce + m - h_s
    d = torch.clamp(raw, max=0.0) if isinstance(raw, torch.Tensor) else min(raw, 0.0)
    return PenaltyTerm(attribute, d, _penalty(d))


def preservation_penalty(l_ce: Scalar, n: float, h_u: float,
                         attribute: str | None = None) -> PenaltyTerm:
    """d = max(L_CE + n - H(U), 0); zero while the collaborator keeps n nats."""
    raw = l_ce + n - h_u
    d = torch.clamp(raw, min=0.0) if isinstance(raw, torch.Tensor) else max(raw, 0.0)
    return PenaltyTerm(attribute, d, _penalty(d))


def total_loss(contrastive: Scalar, suppression: Iterable[PenaltyTerm],
               preservation: Iterable[PenaltyTerm], lam: float = 1.0) -> Scalar:
    """contrastive + lam * (sum of suppression + preservation penalties)."""
    penalties = [t.value for t in suppression] + [t.value for t in preservation]
    return contrastive + lam * sum(penalties, 0.0)


def l2_reconstruction(x: torch.Tensor, x_prime: torch.Tensor) -> torch.Tensor:
    """Mean over batch and coordinates of (x - x')**2."""
    if x.shape != x_prime.shape:
        raise ValueError(f"dimension mismatch: {tuple(x.shape)} vs {tuple(x_prime.shape)}")
    return ((x - x_prime) ** 2).mean()
