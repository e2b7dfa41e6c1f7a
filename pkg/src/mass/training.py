"""Alternating optimisation of the transformer against attribute classifiers.

Each step first updates every adversary and collaborator by supervised
cross-entropy on transformed data (transformer and feature net frozen),
then updates the transformer and feature net on

    contrastive term + lam * (suppression penalties + preservation penalties)

with every classifier frozen.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .bounds import ConstraintConfig, FeasibilityReport, check_feasibility, empirical_entropy
from .data import Dataset
from .estimators import MineEstimator, StatisticsNet, infonce_loss_dual
from .losses import l2_reconstruction, preservation_penalty, suppression_penalty, total_loss
from .networks import (ClassifierNet, FeatureNet, TransformerNet, copy_network,
                       load_checkpoint, pretrain_classifier, pretrain_feature_extractor,
                       save_checkpoint)

log = logging.getLogger(__name__)

VARIANTS = ("mass", "mass_nf", "mass_l2", "mass_mine")


class InfeasibleConstraintsError(RuntimeError):
    def __init__(self, report: FeasibilityReport):
        self.report = report
        super().__init__("constraints are infeasible: " + "; ".join(report.violations))


class NumericalFailure(FloatingPointError):
    """A loss went NaN/inf; ``snapshot`` holds the parameters before the failing step."""

    def __init__(self, message: str, snapshot: dict):
        self.snapshot = snapshot
        super().__init__(message)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 1e-3
    classifier_learning_rate: float | None = None
    adversary_steps_per_main_step: int = 1
    temperature: float = 0.1
    seed: int = 0
    hidden: int = 128
    classifier_hidden: int = 64
    embed_dim: int = 32
    noise_dim: int | None = None
    pretrain_epochs: int = 30
    pretrain_learning_rate: float = 1e-3
    mine_ema_decay: float = 0.99
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.adversary_steps_per_main_step < 1:
            raise ValueError("adversary_steps_per_main_step must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class Pretrained:
    """Classifiers fitted on original data (one per attribute) and the initial feature net."""

    classifiers: dict[str, ClassifierNet]
    feature_net: FeatureNet
    histories: dict[str, list[float]] = field(default_factory=dict)

    def save(self, directory) -> Path:
        mods = {f"clf__{k}": v for k, v in self.classifiers.items()}
        mods["feature"] = self.feature_net
        return save_checkpoint(directory, mods, {"histories": self.histories})

    @classmethod
    def load(cls, directory) -> "Pretrained":
        mods, meta, _ = load_checkpoint(directory)
        clfs = {k[len("clf__"):]: v for k, v in mods.items() if k.startswith("clf__")}
        return cls(clfs, mods["feature"], meta.get("histories", {}))


def pretrain(dataset: Dataset, config: TrainConfig) -> Pretrained:
    """Fit a classifier per attribute and the contrastive feature net on original train data."""
    x, labels = dataset.split("train")
    clfs, hist = {}, {}
    for i, a in enumerate(dataset.manifest.attributes):
        role = "adversary" if a.role == "sensitive" else "collaborator"
        clfs[a.name], hist[a.name] = pretrain_classifier(
            x, labels[a.name], a.cardinality, epochs=config.pretrain_epochs,
            batch_size=config.batch_size, lr=config.pretrain_learning_rate,
            weight_decay=config.weight_decay, hidden=config.classifier_hidden,
            seed=config.seed + 101 * (i + 1), role=role)
    feat, hist["__feature__"] = pretrain_feature_extractor(
        x, epochs=config.pretrain_epochs, batch_size=config.batch_size,
        temperature=config.temperature, embed_dim=config.embed_dim, hidden=config.hidden,
        lr=config.pretrain_learning_rate, weight_decay=config.weight_decay, seed=config.seed)
    return Pretrained(clfs, feat, hist)


# -- loss assembly per variant -------------------------------------------------

UnannotatedTerm = Callable[["TrainState", torch.Tensor, torch.Tensor],
                           tuple[torch.Tensor, float | None]]


def _infonce_term(state, x, xp):
    f = state.feature_net(x)
    hx = state.feature_net(xp)
    loss, est = infonce_loss_dual(f, hx, state.config.temperature)
    return loss, est.value


def _no_term(state, x, xp):
    return torch.zeros((), dtype=xp.dtype), None


def _l2_term(state, x, xp):
    return l2_reconstruction(x, xp), None


def _mine_term(state, x, xp):
    perm = torch.randperm(xp.shape[0], generator=state.generator)
    surrogate, est = state.mine.loss(x, xp, xp[perm])
    return surrogate, est.value


def build_variant(tag: str) -> UnannotatedTerm:
    """Return the term that stands in for -I(X'; F) in the objective."""
    terms = {"mass": _infonce_term, "mass_nf": _no_term,
             "mass_l2": _l2_term, "mass_mine": _mine_term}
    try:
        return terms[tag]
    except KeyError:
        raise ValueError(f"unknown variant {tag!r}; choose from {VARIANTS}") from None


# -- state ------------------------------------------------------------------

@dataclass
class TrainState:
    transformer: TransformerNet
    adversaries: dict[str, ClassifierNet]
    collaborators: dict[str, ClassifierNet]
    feature_net: FeatureNet
    constraints: ConstraintConfig
    entropies: dict[str, float]
    config: TrainConfig
    variant: str
    steps_per_epoch: int
    critic: StatisticsNet | None = None
    generator: torch.Generator = field(default_factory=torch.Generator)
    epoch: int = 0
    step: int = 0
    history: list[dict] = field(default_factory=list)
    main_opt: torch.optim.Optimizer | None = None
    cls_opt: torch.optim.Optimizer | None = None
    main_sched: object = None
    cls_sched: object = None
    mine: MineEstimator | None = None

    @property
    def classifiers(self) -> dict[str, ClassifierNet]:
        return {**self.adversaries, **self.collaborators}

    def main_parameters(self) -> list[nn.Parameter]:
        params = list(self.transformer.parameters()) + list(self.feature_net.parameters())
        if self.critic is not None:
            params += list(self.critic.parameters())
        return params

    def classifier_parameters(self) -> list[nn.Parameter]:
        return [p for c in self.classifiers.values() for p in c.parameters()]

    def modules(self) -> dict[str, nn.Module]:
        mods = {"transformer": self.transformer, "feature": self.feature_net}
        mods.update({f"adv__{k}": v for k, v in self.adversaries.items()})
        mods.update({f"col__{k}": v for k, v in self.collaborators.items()})
        if self.critic is not None:
            mods["critic"] = self.critic
        return mods


def _cosine(total_steps: int):
    total = max(total_steps, 1)
    return lambda step: 0.5 * (1.0 + math.cos(math.pi * min(step, total) / total))


def _build_optimizers(state: TrainState) -> None:
    cfg = state.config
    total = cfg.epochs * state.steps_per_epoch
    state.main_opt = torch.optim.AdamW(state.main_parameters(), lr=cfg.learning_rate,
                                       weight_decay=cfg.weight_decay)
    state.main_sched = torch.optim.lr_scheduler.LambdaLR(state.main_opt, _cosine(total))
    cls_params = state.classifier_parameters()
    if cls_params:
        state.cls_opt = torch.optim.AdamW(
            cls_params, lr=cfg.classifier_learning_rate or cfg.learning_rate,
            weight_decay=cfg.weight_decay)
        state.cls_sched = torch.optim.lr_scheduler.LambdaLR(
            state.cls_opt, _cosine(total * cfg.adversary_steps_per_main_step))


def train_entropies(dataset: Dataset, constraints: ConstraintConfig) -> dict[str, float]:
    """Plug-in H(S_i), H(U_j) on the training split, fixed for the whole run."""
    out = {}
    for name in list(constraints.m) + list(constraints.n):
        card = dataset.manifest.attribute(name).cardinality
        out[name] = empirical_entropy(dataset.labels[name][dataset.train_index], card)
    return out


def init_state(dataset: Dataset, constraints: ConstraintConfig, config: TrainConfig,
               variant: str = "mass", pretrained: Pretrained | None = None) -> TrainState:
    build_variant(variant)
    roles = {a.name: a.role for a in dataset.manifest.attributes}
    for name in constraints.m:
        if roles.get(name) != "sensitive":
            raise ValueError(f"suppression budget given for {name!r}, which is not sensitive")
    for name in constraints.n:
        if roles.get(name) != "useful":
            raise ValueError(f"preservation floor given for {name!r}, which is not useful")
    missing = [a.name for a in dataset.manifest.attributes
               if a.trainable and a.name not in constraints.m and a.name not in constraints.n]
    if missing:
        raise ValueError(f"no constraint given for attributes {missing}")

    torch.manual_seed(config.seed)
    if pretrained is None:
        pretrained = pretrain(dataset, config)
    dim = dataset.feature_dim
    transformer = TransformerNet(dim, config.noise_dim, config.hidden)
    adversaries = {s: copy_network(pretrained.classifiers[s], "adversary") for s in constraints.m}
    collaborators = {u: copy_network(pretrained.classifiers[u], "collaborator")
                     for u in constraints.n}
    critic = StatisticsNet(dim, dim, config.hidden) if variant == "mass_mine" else None
    n_train = len(dataset.train_index)
    steps = n_train // config.batch_size + (1 if n_train % config.batch_size >= 2 else 0)
    state = TrainState(transformer, adversaries, collaborators,
                       copy_network(pretrained.feature_net), constraints,
                       train_entropies(dataset, constraints), config, variant, steps,
                       critic=critic, generator=torch.Generator().manual_seed(config.seed))
    if critic is not None:
        state.mine = MineEstimator(critic, config.mine_ema_decay)
    _build_optimizers(state)
    return state


def _snapshot(state: TrainState) -> dict:
    return {k: copy.deepcopy(m.state_dict()) for k, m in state.modules().items()}


def _scalar(v):
    return v.item() if torch.is_tensor(v) else float(v)


def _check_finite(value: torch.Tensor, what: str, state: TrainState, snap: dict) -> None:
    if not torch.isfinite(value).all():
        raise NumericalFailure(f"{what} is not finite at step {state.step}", snap)


def classifier_phase(x: torch.Tensor, labels: dict[str, torch.Tensor], state: TrainState,
                     snap: dict | None = None) -> float | None:
    """Supervised adversary/collaborator updates on transformed data; theta, eta untouched."""
    if state.cls_opt is None:
        return None
    for _ in range(state.config.adversary_steps_per_main_step):
        with torch.no_grad():
            xp = state.transformer(x, state.transformer.sample_noise(len(x), state.generator),
                                   generator=state.generator)
        loss_c = sum(F.cross_entropy(clf(xp), labels[k])
                     for k, clf in state.classifiers.items())
        _check_finite(loss_c, "classifier loss", state, snap or _snapshot(state))
        state.cls_opt.zero_grad()
        loss_c.backward()
        state.cls_opt.step()
        state.cls_sched.step()
    return loss_c.item()


def main_phase(x: torch.Tensor, labels: dict[str, torch.Tensor], state: TrainState,
               snap: dict | None = None) -> dict:
    """Transformer / feature-net update on the total loss with every classifier frozen."""
    cons = state.constraints
    record = {}
    frozen = state.classifier_parameters()
    for p in frozen:
        p.requires_grad_(False)
    try:
        xp = state.transformer(x, state.transformer.sample_noise(len(x), state.generator),
                               generator=state.generator)
        supp, pres = [], []
        for s, adv in state.adversaries.items():
            ce = F.cross_entropy(adv(xp), labels[s])
            supp.append(suppression_penalty(ce, cons.m[s], state.entropies[s], s))
            record[f"ce__{s}"] = ce.item()
        for u, col in state.collaborators.items():
            ce = F.cross_entropy(col(xp), labels[u])
            pres.append(preservation_penalty(ce, cons.n[u], state.entropies[u], u))
            record[f"ce__{u}"] = ce.item()
        term, mi = build_variant(state.variant)(state, x, xp)
        total = total_loss(term, supp, pres, cons.lam)
        _check_finite(total, "total loss", state, snap or _snapshot(state))
        state.main_opt.zero_grad()
        total.backward()
        state.main_opt.step()
        state.main_sched.step()
    finally:
        for p in frozen:
            p.requires_grad_(True)

    for t in supp + pres:
        record[f"d__{t.attribute}"] = _scalar(t.raw_slack)
        record[f"penalty__{t.attribute}"] = _scalar(t.value)
    record["unannotated"] = term.item()
    record["total"] = total.item()
    if mi is not None:
        record["mi_estimate"] = mi
    return record


def train_step(x: torch.Tensor, labels: dict[str, torch.Tensor], state: TrainState) -> dict:
    """One adversary/collaborator phase followed by one transformer/feature phase."""
    snap = _snapshot(state)
    record = {"epoch": state.epoch, "step": state.step, "batch": len(x)}
    loss_c = classifier_phase(x, labels, state, snap)
    if loss_c is not None:
        record["classifier_loss"] = loss_c
    record.update(main_phase(x, labels, state, snap))
    state.step += 1
    state.history.append(record)
    return record


def _epoch_batches(dataset: Dataset, state: TrainState):
    x_all, lab_all = dataset.split("train")
    x_all = torch.as_tensor(x_all, dtype=torch.float32)
    needed = list(state.classifiers)
    lab_all = {k: torch.as_tensor(lab_all[k], dtype=torch.long) for k in needed}
    perm = torch.randperm(len(x_all), generator=state.generator)
    bs = state.config.batch_size
    for i in range(0, len(perm), bs):
        idx = perm[i:i + bs]
        if len(idx) < 2:
            continue
        yield x_all[idx], {k: v[idx] for k, v in lab_all.items()}


# -- checkpoints ------------------------------------------------------------

def save_state(state: TrainState, directory) -> Path:
    extra = {
        "main_opt": state.main_opt.state_dict(),
        "main_sched": state.main_sched.state_dict(),
        "cls_opt": state.cls_opt.state_dict() if state.cls_opt else None,
        "cls_sched": state.cls_sched.state_dict() if state.cls_sched else None,
        "generator": state.generator.get_state(),
        "mine_ema": state.mine.ema_denominator if state.mine else None,
        "history": state.history,
    }
    meta = {"epoch": state.epoch, "step": state.step, "variant": state.variant,
            "seed": state.config.seed, "config": asdict(state.config),
            "constraints": state.constraints.to_dict(), "entropies": state.entropies,
            "steps_per_epoch": state.steps_per_epoch}
    return save_checkpoint(directory, state.modules(), meta, extra)


def load_state(directory) -> TrainState:
    mods, meta, extra = load_checkpoint(directory)
    config = TrainConfig.from_dict(meta["config"])
    state = TrainState(
        transformer=mods["transformer"],
        adversaries={k[5:]: v for k, v in mods.items() if k.startswith("adv__")},
        collaborators={k[5:]: v for k, v in mods.items() if k.startswith("col__")},
        feature_net=mods["feature"],
        constraints=ConstraintConfig.from_dict(meta["constraints"]),
        entropies=meta["entropies"], config=config, variant=meta["variant"],
        steps_per_epoch=meta["steps_per_epoch"], critic=mods.get("critic"),
        epoch=meta["epoch"], step=meta["step"], history=list(extra["history"]))
    if state.critic is not None:
        state.mine = MineEstimator(state.critic, config.mine_ema_decay)
        state.mine.ema_denominator = extra["mine_ema"]
    _build_optimizers(state)
    state.main_opt.load_state_dict(extra["main_opt"])
    state.main_sched.load_state_dict(extra["main_sched"])
    if state.cls_opt is not None:
        state.cls_opt.load_state_dict(extra["cls_opt"])
        state.cls_sched.load_state_dict(extra["cls_sched"])
    state.generator.set_state(extra["generator"])
    return state


# -- fit ------------------------------------------------------------------

@dataclass
class FitResult:
    state: TrainState
    report: dict
    feasibility: FeasibilityReport


def _epoch_means(records: list[dict]) -> dict:
    keys = sorted({k for r in records for k in r if k not in ("epoch", "step", "batch")})
    return {k: float(np.mean([r[k] for r in records if k in r])) for k in keys}


def final_attribute_report(state: TrainState, dataset: Dataset, seed: int = 0) -> dict:
    """Cross-entropy of each adversary/collaborator on the transformed train split.

    The implied MI estimate is H - L_CE.
    """
    from .networks import transform
    x, labels = dataset.split("train")
    xp = transform(x, state.transformer, seed=seed)
    out = {}
    with torch.no_grad():
        for name, clf in state.classifiers.items():
            y = torch.as_tensor(labels[name], dtype=torch.long)
            ce = float(F.cross_entropy(clf(xp), y))
            h = state.entropies[name]
            if name in state.constraints.m:
                d = float(suppression_penalty(ce, state.constraints.m[name], h).raw_slack)
            else:
                d = float(preservation_penalty(ce, state.constraints.n[name], h).raw_slack)
            out[name] = {"cross_entropy": ce, "entropy": h, "mi_estimate": h - ce, "slack": d}
    return out


def fit(dataset: Dataset, constraints: ConstraintConfig, config: TrainConfig,
        variant: str = "mass", pretrained: Pretrained | None = None,
        out_dir: str | os.PathLike | None = None, force: bool = False,
        resume_from: str | os.PathLike | None = None) -> FitResult:
    """Run the full epoch loop; refuses infeasible constraints unless ``force``."""
    feas = check_feasibility(constraints, dataset)
    if not feas.feasible and not force:
        raise InfeasibleConstraintsError(feas)
    if resume_from is not None:
        state = load_state(resume_from)
    else:
        state = init_state(dataset, constraints, config, variant, pretrained)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    log_rows = []
    while state.epoch < config.epochs:
        state.transformer.train()
        records = [train_step(xb, yb, state) for xb, yb in _epoch_batches(dataset, state)]
        state.epoch += 1
        row = {"epoch": state.epoch, **_epoch_means(records)}
        log_rows.append(row)
        log.info("epoch %d: %s", state.epoch,
                 ", ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "epoch"))
        if out is not None:
            _append_loss_log(out / "losses.csv", row)
            if config.checkpoint_every and state.epoch % config.checkpoint_every == 0:
                save_state(state, out / "checkpoints" / f"epoch_{state.epoch:04d}")
    report = {"variant": state.variant, "epochs": state.epoch, "steps": state.step,
              "constraints": constraints.to_dict(),
              "attributes": final_attribute_report(state, dataset, seed=config.seed),
              "last_epoch": log_rows[-1] if log_rows else {}}
    if out is not None:
        save_state(state, out / "final")
        with open(out / "train_report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
    return FitResult(state, report, feas)


def _append_loss_log(path: Path, row: dict) -> None:
    exists = path.exists()
    if exists:
        with open(path, newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
    else:
        header = list(row)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=header, extrasaction="ignore", lineterminator="\n")
        if not exists:
            w.writeheader()
        w.writerow(row)
