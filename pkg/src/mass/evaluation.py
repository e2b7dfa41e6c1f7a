"""Accuracy / NAG metrics, attacker audits and report files.

NAG (normalised accuracy gain) puts an attribute's accuracy on a scale
where 0 is the majority-class guess and 1 is a classifier trained and
evaluated on untransformed data.  It is clipped below at 0 but not above.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .bounds import guessing_accuracy
from .estimators import MiEstimate, infonce_batch
from .networks import (ClassifierNet, FeatureNet, accuracy, copy_network, train_classifier,
                       transform)

CSV_COLUMNS = ["attribute", "role", "evaluator", "acc", "nag", "acc_guessing",
               "acc_no_suppression"]


class DegenerateReferenceError(ValueError):
    pass


def nag(acc: float, acc_guessing: float, acc_no_suppression: float,
        attribute: str | None = None) -> float:
    """max(0, (acc - guess) / (no_suppression - guess))."""
    denom = acc_no_suppression - acc_guessing
    if denom <= 0:
        where = f" for attribute {attribute!r}" if attribute else ""
        raise DegenerateReferenceError(
            f"no-suppression accuracy {acc_no_suppression} does not exceed "
            f"guessing accuracy {acc_guessing}{where}")
    return max(0.0, (acc - acc_guessing) / denom)


@dataclass
class EvalConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 1e-3
    weight_decay: float = 1e-3
    hidden: int = 64
    seed: int = 0
    probe_epochs: int = 40
    probe_temperature: float = 0.1
    probe_embed_dim: int = 32
    probe_patience: int = 5


# -- single-attribute evaluators ----------------------------------------------

def eval_sensitive(x_prime_eval, labels_eval, adversary: ClassifierNet) -> float:
    """Top-1 accuracy of the adversarially trained classifier on transformed eval data."""
    if len(labels_eval) == 0:
        raise ValueError("empty eval split")
    return accuracy(x_prime_eval, labels_eval, adversary)


def eval_useful(x_prime_train, labels_train, x_prime_eval, labels_eval,
                init: ClassifierNet, config: EvalConfig = EvalConfig()) -> float:
    """Fine-tune a copy of the pretrained classifier on transformed data; eval accuracy."""
    if len(labels_eval) == 0:
        raise ValueError("empty eval split")
    clf = copy_network(init)
    train_classifier(clf, x_prime_train, labels_train, config.epochs, config.batch_size,
                     config.learning_rate, config.weight_decay, seed=config.seed)
    return accuracy(x_prime_eval, labels_eval, clf)


def retrain_attacker(x_prime_train, labels_train, x_prime_eval, labels_eval, n_classes: int,
                     config: EvalConfig = EvalConfig()) -> float:
    """Train a fresh classifier from scratch on (X', labels); eval accuracy."""
    if len(labels_eval) == 0:
        raise ValueError("empty eval split")
    torch.manual_seed(config.seed + 7919)
    clf = ClassifierNet(np.asarray(x_prime_train).shape[1], n_classes, config.hidden)
    train_classifier(clf, x_prime_train, labels_train, config.epochs, config.batch_size,
                     config.learning_rate, config.weight_decay, seed=config.seed + 7919)
    return accuracy(x_prime_eval, labels_eval, clf)


def infonce_mi_probe(x_prime_train, target_train, x_prime_eval, target_eval,
                     config: EvalConfig = EvalConfig()) -> MiEstimate:
    """InfoNCE estimate of I(X'; T) from a critic trained on the train split.

    ``target`` is either integer class labels (one-hot encoded here) or a
    feature matrix.  Two fresh embedding nets are trained by in-batch
    InfoNCE; a fifth of the train split is held out for early stopping,
    and the bound ln(K+1) - loss is averaged over eval batches.
    """
    def prep(t):
        t = np.array(t)
        return t.astype(np.int64) if t.ndim == 1 else torch.tensor(t, dtype=torch.float32)

    ttr, tev = prep(target_train), prep(target_eval)
    if isinstance(ttr, np.ndarray):
        k = int(max(ttr.max(), tev.max())) + 1
        ttr = F.one_hot(torch.as_tensor(ttr), k).float()
        tev = F.one_hot(torch.as_tensor(tev), k).float()
    xtr = torch.tensor(np.array(x_prime_train), dtype=torch.float32)
    xev = torch.tensor(np.array(x_prime_eval), dtype=torch.float32)
    bs = config.batch_size
    if len(xev) < bs:
        raise ValueError(f"eval split smaller than one batch ({bs})")

    torch.manual_seed(config.seed + 31)
    g = torch.Generator().manual_seed(config.seed + 31)
    order = torch.randperm(len(xtr), generator=g)
    n_val = max(bs, len(xtr) // 5)
    val, fit_idx = order[:n_val], order[n_val:]
    net_x = FeatureNet(xtr.shape[1], config.probe_embed_dim)
    net_t = FeatureNet(ttr.shape[1], config.probe_embed_dim)
    params = list(net_x.parameters()) + list(net_t.parameters())
    opt = torch.optim.AdamW(params, lr=config.learning_rate, weight_decay=config.weight_decay)

    def bound(x, t):
        with torch.no_grad():
            vals = [infonce_batch(net_t(t[i:i + bs]), net_x(x[i:i + bs]),
                                  config.probe_temperature)[1].value
                    for i in range(0, len(x) - bs + 1, bs)]
        return float(np.mean(vals))

    best, best_params, stale = -math.inf, None, 0
    for _ in range(config.probe_epochs):
        perm = fit_idx[torch.randperm(len(fit_idx), generator=g)]
        for i in range(0, len(perm) - bs + 1, bs):
            idx = perm[i:i + bs]
            loss, _ = infonce_batch(net_t(ttr[idx]), net_x(xtr[idx]), config.probe_temperature)
            opt.zero_grad()
            loss.backward()
            opt.step()
        score = bound(xtr[val], ttr[val])
        if score > best:
            best, stale = score, 0
            best_params = [p.detach().clone() for p in params]
        else:
            stale += 1
            if stale >= config.probe_patience:
                break
    with torch.no_grad():
        for p, b in zip(params, best_params):
            p.copy_(b)
    perm = torch.randperm(len(xev), generator=g)
    return MiEstimate(bound(xev[perm], tev[perm]), "infonce", bs)


# -- reports ------------------------------------------------------------------

@dataclass
class MetricEntry:
    attribute: str
    role: str
    evaluator: str
    acc: float
    nag: float
    acc_guessing: float
    acc_no_suppression: float


@dataclass
class MetricsReport:
    entries: list[MetricEntry]
    variant: str = "mass"
    constraints: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    mi_estimates: dict[str, float] = field(default_factory=dict)

    def get(self, attribute: str, evaluator: str) -> MetricEntry:
        for e in self.entries:
            if e.attribute == attribute and e.evaluator == evaluator:
                return e
        raise KeyError((attribute, evaluator))

    def to_dict(self) -> dict:
        return {"variant": self.variant, "constraints": self.constraints, "seeds": self.seeds,
                "mi_estimates": self.mi_estimates,
                "entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        return cls([MetricEntry(**e) for e in d["entries"]], d.get("variant", "mass"),
                   dict(d.get("constraints", {})), dict(d.get("seeds", {})),
                   dict(d.get("mi_estimates", {})))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for e in self.entries:
            w.writerow([e.attribute, e.role, e.evaluator, repr(e.acc), repr(e.nag),
                        repr(e.acc_guessing), repr(e.acc_no_suppression)])
        return buf.getvalue()

    def table(self) -> str:
        """One line per entry in the "accuracy (NAG)" layout."""
        lines = [f"variant: {self.variant}"]
        for e in self.entries:
            lines.append(f"{e.attribute:>12s} {e.role:>10s} {e.evaluator:>11s}  "
                         f"{e.acc:.4f} ({e.nag:.4f})   guess {e.acc_guessing:.4f}  "
                         f"no-supp {e.acc_no_suppression:.4f}")
        for k, v in self.mi_estimates.items():
            lines.append(f"  I(X';{k}) ~ {v:.4f} nats")
        return "\n".join(lines)


def report(metrics: MetricsReport, destination: str | os.PathLike,
           name: str = "metrics") -> list[Path]:
    """Write ``<name>.json`` and ``<name>.csv`` under ``destination``."""
    dest = Path(destination)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        jpath, cpath = dest / f"{name}.json", dest / f"{name}.csv"
        with open(jpath, "w", encoding="utf-8") as fh:
            json.dump(metrics.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(cpath, "w", encoding="utf-8", newline="") as fh:
            fh.write(metrics.to_csv())
    except OSError as e:
        raise OSError(f"cannot write report to {dest}: {e}") from e
    return [jpath, cpath]


def load_report(path: str | os.PathLike) -> MetricsReport:
    with open(path, encoding="utf-8") as fh:
        return MetricsReport.from_dict(json.load(fh))


# -- full evaluation ----------------------------------------------------------

def evaluate(state, dataset, pretrained, config: EvalConfig = EvalConfig(),
             retrain: bool = True, probe_targets: Sequence[str] | None = None) -> MetricsReport:
    """Evaluate every attribute of ``dataset`` on data transformed by ``state``.

    Sensitive attributes get the adversary's accuracy and, if ``retrain``,
    a from-scratch attacker.  Useful and concealed attributes get a
    classifier fine-tuned from its pretrained initialisation.  The InfoNCE
    probe estimates I(X'; T) for each name in ``probe_targets`` (default:
    concealed attributes and latent ground-truth columns).
    """
    x_tr, lab_tr = dataset.split("train")
    x_ev, lab_ev = dataset.split("eval")
    xp_tr = transform(x_tr, state.transformer, seed=config.seed).numpy()
    xp_ev = transform(x_ev, state.transformer, seed=config.seed + 1).numpy()

    entries = []
    for a in dataset.manifest.attributes:
        y_tr, y_ev = lab_tr[a.name], lab_ev[a.name]
        guess = guessing_accuracy(y_ev)
        ref = accuracy(x_ev, y_ev, pretrained.classifiers[a.name])

        def entry(evaluator, acc):
            return MetricEntry(a.name, a.role, evaluator, acc, nag(acc, guess, ref, a.name),
                               guess, ref)

        if a.role == "sensitive":
            entries.append(entry("adversarial",
                                 eval_sensitive(xp_ev, y_ev, state.adversaries[a.name])))
            if retrain:
                entries.append(entry("retrained", retrain_attacker(
                    xp_tr, y_tr, xp_ev, y_ev, a.cardinality, config)))
        else:
            entries.append(entry("tuned", eval_useful(
                xp_tr, y_tr, xp_ev, y_ev, pretrained.classifiers[a.name], config)))

    if probe_targets is None:
        probe_targets = [a.name for a in dataset.manifest.by_role("concealed")]
        probe_targets += list(dataset.latent)
    mi = {}
    for name in probe_targets:
        full = dataset.labels.get(name)
        if full is None:
            full = dataset.latent[name]
        est = infonce_mi_probe(xp_tr, full[dataset.train_index], xp_ev,
                               full[dataset.eval_index], config)
        mi[name] = est.value
    return MetricsReport(entries, state.variant, state.constraints.to_dict(),
                         {"train": state.config.seed, "eval": config.seed}, mi)


def plot_sweep(values: Sequence[float], reports: Sequence[MetricsReport], attribute: str,
               evaluator: str, path: str | os.PathLike, label: str = "m") -> Path:
    """Accuracy and NAG of one attribute across a constraint sweep, as a PNG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    accs = [r.get(attribute, evaluator).acc for r in reports]
    nags = [r.get(attribute, evaluator).nag for r in reports]
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(values, accs, "o-", label="accuracy")
    ax.plot(values, nags, "s--", label="NAG")
    ax.set_xlabel(f"{label} ({attribute}), nats")
    ax.set_title(f"{attribute} / {evaluator}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return Path(path)
