"""Mutual-information estimators.

* ``ce_mi_estimate``: H(S) minus the cross-entropy of a classifier.
* ``infonce_loss`` / ``infonce_loss_dual``: contrastive lower bound with
  cosine/temperature scores, saturating at ln(K + 1).
* ``MineEstimator``: Donsker-Varadhan bound with a moving-average
  denominator, used by the MINE ablation.
* ``brute_force_mi`` / ``frozen_classifier_error``: exact values on
  discrete joints.

The contrastive loss is the *negated* log-ratio, so it is nonnegative and
is minimised; the MI estimate is ``ln(K + 1) - loss``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .joint import DiscreteJoint

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class MiEstimate:
    value: float
    estimator: str
    batch_size: int
    clamped: int = 0

    def __float__(self):
        return self.value


@dataclass(frozen=True)
class InfoNceConfig:
    temperature: float = 0.1
    negatives_per_anchor: int | None = None
    anchor_side: str = "both"

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.anchor_side not in ("feature_space", "transformed_space", "both"):
            raise ValueError(f"unknown anchor_side {self.anchor_side!r}")


# -- classifier-based estimate ---------------------------------------------

def ce_mi_estimate(probs, labels, prior_entropy: float) -> MiEstimate:
    """H(S) - mean cross-entropy of ``probs`` at the true ``labels``.

    Probabilities below 1e-12 for the true class are floored there and
    counted in ``clamped``.  The result is not clipped at zero.
    """
    p = torch.as_tensor(probs, dtype=torch.float64)
    y = torch.as_tensor(labels, dtype=torch.long)
    if p.ndim != 2 or y.shape != (p.shape[0],):
        raise ValueError("probs must be (batch, classes) and labels (batch,)")
    if torch.any(p < 0) or not torch.allclose(p.sum(1), torch.ones(len(p), dtype=p.dtype), atol=1e-6):
        raise ValueError("rows of probs must be probability vectors")
    picked = p[torch.arange(len(y)), y]
    low = picked < PROB_FLOOR
    n_low = int(low.sum())
    if n_low:
        log.warning("%d predictions gave the true class < %g; floored", n_low, PROB_FLOOR)
    ce = -torch.log(picked.clamp_min(PROB_FLOOR)).mean()
    return MiEstimate(float(prior_entropy - ce), "ce", int(len(y)), n_low)


# -- InfoNCE ----------------------------------------------------------------

def _unit(v: torch.Tensor) -> torch.Tensor:
    norms = v.norm(dim=-1, keepdim=True)
    if torch.any(norms < _NORM_EPS):
        raise ValueError("zero-norm vector in cosine similarity")
    return v / norms


def infonce_loss(anchors: torch.Tensor, positives: torch.Tensor, negatives: torch.Tensor,
                 temperature: float = 0.1) -> tuple[torch.Tensor, MiEstimate]:
    """Contrastive loss for explicit (anchor, positive, K negatives) triples.

    anchors, positives: (B, d); negatives: (B, K, d).  Inputs are already
    projected; scores are exp(cos(a, v) / temperature).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    a, p, n = _unit(anchors), _unit(positives), _unit(negatives)
    pos = (a * p).sum(-1, keepdim=True)
    neg = torch.einsum("bd,bkd->bk", a, n)
    logits = torch.cat([pos, neg], dim=1) / temperature
    loss = -F.log_softmax(logits, dim=1)[:, 0].mean()
    k = negatives.shape[1]
    return loss, _nce_estimate(loss, k, anchors.shape[0])


def _nce_estimate(loss: torch.Tensor, k: int, batch: int) -> MiEstimate:
    value = math.log(k + 1) - float(loss.detach())
    # the estimate lives in [0, ln(K+1)] up to float round-off
    value = min(max(value, 0.0), math.log(k + 1))
    return MiEstimate(value, "infonce", batch)


def score_matrix(f: torch.Tensor, hx: torch.Tensor, temperature: float) -> torch.Tensor:
    """cos(f_i, h(x'_j)) / temperature for every pair in the batch."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return _unit(f) @ _unit(hx).T / temperature


def infonce_batch(f: torch.Tensor, hx: torch.Tensor, temperature: float = 0.1,
                  anchor_side: str = "feature_space") -> tuple[torch.Tensor, MiEstimate]:
    """In-batch InfoNCE: row i is positive with column i, the other K = B-1 are negatives.

    ``feature_space`` anchors on f (negatives are the other transformed
    samples); ``transformed_space`` anchors on h(x') (negatives are the
    other features).  Each sample is an anchor once and the losses are
    averaged.
    """
    if f.shape[0] < 2:
        raise ValueError("need at least 2 samples per batch")
    logits = score_matrix(f, hx, temperature)
    target = torch.arange(f.shape[0], device=f.device)
    if anchor_side == "feature_space":
        loss = F.cross_entropy(logits, target)
    elif anchor_side == "transformed_space":
        loss = F.cross_entropy(logits.T, target)
    else:
        raise ValueError(f"unknown anchor_side {anchor_side!r}")
    return loss, _nce_estimate(loss, f.shape[0] - 1, f.shape[0])


def infonce_loss_dual(f: torch.Tensor, hx: torch.Tensor, temperature: float = 0.1
                      ) -> tuple[torch.Tensor, MiEstimate]:
    """Mean of the feature-anchored and transformed-anchored in-batch losses."""
    l_f, _ = infonce_batch(f, hx, temperature, "feature_space")
    l_x, _ = infonce_batch(f, hx, temperature, "transformed_space")
    loss = 0.5 * (l_f + l_x)
    return loss, _nce_estimate(loss, f.shape[0] - 1, f.shape[0])


# -- MINE -----------------------------------------------------------------

class StatisticsNet(nn.Module):
    """T(a, b) -> scalar, an MLP on the concatenated pair."""

    def __init__(self, dim_a: int, dim_b: int, hidden: int = 64):
        super().__init__()
        self.dim_a, self.dim_b, self.hidden = dim_a, dim_b, hidden
        self.net = nn.Sequential(
            nn.Linear(dim_a + dim_b, hidden), nn.ReLU(),
            nn.Linear(hidden, hidden), nn.ReLU(),
            nn.Linear(hidden, 1))

    def descriptor(self) -> dict:
        return {"kind": "statistics", "dim_a": self.dim_a, "dim_b": self.dim_b,
                "hidden": self.hidden}

    def forward(self, a, b):
        return self.net(torch.cat([a, b], dim=1)).squeeze(1)


class MineEstimator:
    """Donsker-Varadhan estimate E_joint[T] - ln E_marginal[e^T].

    The gradient uses a moving average of the marginal denominator to
    reduce the bias of the mini-batch log.
    """

    def __init__(self, statistics_network: nn.Module, ema_decay: float = 0.99,
                 max_log_denominator: float = 50.0):
        self.statistics_network = statistics_network
        self.ema_decay = ema_decay
        self.max_log_denominator = max_log_denominator
        self.ema_denominator: torch.Tensor | None = None
        self.overflow_count = 0

    def loss(self, a: torch.Tensor, b: torch.Tensor, b_marginal: torch.Tensor
             ) -> tuple[torch.Tensor, MiEstimate]:
        t_joint = self.statistics_network(a, b)
        t_marg = self.statistics_network(a, b_marginal)
        log_denom = torch.logsumexp(t_marg, 0) - math.log(t_marg.shape[0])
        if log_denom.item() > self.max_log_denominator:
            self.overflow_count += 1
            log.warning("MINE denominator overflow (log %.1f); clipping", log_denom.item())
            t_marg = t_marg.clamp(max=self.max_log_denominator)
            log_denom = torch.logsumexp(t_marg, 0) - math.log(t_marg.shape[0])
        denom = torch.exp(log_denom)
        if self.ema_denominator is None:
            self.ema_denominator = denom.detach()
        else:
            self.ema_denominator = (self.ema_decay * self.ema_denominator
                                    + (1 - self.ema_decay) * denom.detach())
        value = t_joint.mean() - log_denom
        # same value as -DV, gradient rescaled by the running denominator
        surrogate = -(t_joint.mean() - denom / self.ema_denominator
                      - torch.log(self.ema_denominator) + 1.0)
        return surrogate, MiEstimate(float(value.detach()), "mine", int(a.shape[0]))


def mine_estimate(statistics_network: nn.Module, joint_a, joint_b, marginal_b) -> MiEstimate:
    """Evaluate the DV bound once, without any training."""
    with torch.no_grad():
        t_joint = statistics_network(joint_a, joint_b)
        t_marg = statistics_network(joint_a, marginal_b)
        value = t_joint.mean() - (torch.logsumexp(t_marg, 0) - math.log(t_marg.shape[0]))
    return MiEstimate(float(value), "mine", int(joint_a.shape[0]))


# -- exact oracles ------------------------------------------------------------

def brute_force_mi(joint: DiscreteJoint, a, b) -> float:
    """Exact I(a; b) of a discrete joint, by dense summation."""
    return joint.mutual_information(a, b)


@dataclass(frozen=True)
class FrozenClassifierError:
    mi_true: float
    mi_frozen: float
    expected_kl: float

    @property
    def gap(self) -> float:
        return self.mi_true - self.mi_frozen


def frozen_classifier_error(joint: DiscreteJoint, predictor, label_axis: str = "U",
                            data_axis: str = "X'") -> FrozenClassifierError:
    """Compare I(X';U) with the MI implied by a fixed predictor Q(u | x').

    ``predictor[x', u]`` is the frozen classifier's conditional.  Returns
    both sides of I - I_Q = E_{x'} KL(P(U|x') || Q(U|x')) computed
    independently; an absolute-continuity failure gives +inf.
    """
    q = np.asarray(predictor, dtype=np.float64)
    pxu = joint.marginal_table((data_axis, label_axis))
    if q.shape != pxu.shape:
        raise ValueError(f"predictor shape {q.shape} != {pxu.shape}")
    pu = joint.marginal_table(label_axis)
    mi_true = joint.mutual_information(data_axis, label_axis)

    mask = pxu > 0
    if np.any(q[mask] <= 0):
        return FrozenClassifierError(mi_true, -math.inf, math.inf)
    mi_frozen = float(np.sum(pxu[mask] * np.log((q / pu[None, :])[mask])))

    px = pxu.sum(axis=1)
    kl = 0.0
    for x in range(pxu.shape[0]):
        if px[x] == 0:
            continue
        cond = pxu[x] / px[x]
        nz = cond > 0
        kl += px[x] * float(np.sum(cond[nz] * np.log(cond[nz] / q[x, nz])))
    return FrozenClassifierError(mi_true, mi_frozen, kl)
