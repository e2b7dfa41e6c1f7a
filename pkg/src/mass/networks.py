"""Transformer, attribute classifiers, feature extractor and their pretraining."""
from __future__ import annotations

import copy
import json
import logging
import math
import os
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .estimators import infonce_batch

log = logging.getLogger(__name__)


def _as_tensor(x) -> torch.Tensor:
    t = torch.as_tensor(x, dtype=torch.float32)
    if not torch.all(torch.isfinite(t)):
        raise ValueError("non-finite input")
    return t


def _mlp(d_in: int, hidden: int, d_out: int) -> nn.Sequential:
    return nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(),
                         nn.Linear(hidden, hidden), nn.ReLU(),
                         nn.Linear(hidden, d_out))


def gumbel_softmax_output(logits: torch.Tensor, blocks: Sequence[slice], temperature: float,
                          hard: bool = False, generator: torch.Generator | None = None
                          ) -> torch.Tensor:
    """Relax each categorical block of ``logits`` with Gumbel-Softmax.

    Columns outside ``blocks`` pass through unchanged.  In hard mode each
    block is an exact one-hot vector in the forward pass with the soft
    gradient (straight-through).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    parts, last = [], 0
    for sl in sorted(blocks, key=lambda s: s.start):
        parts.append(logits[:, last:sl.start])
        z = logits[:, sl]
        u = torch.rand(z.shape, generator=generator, dtype=z.dtype).clamp(1e-10, 1 - 1e-10)
        y = F.softmax((z - torch.log(-torch.log(u))) / temperature, dim=1)
        if hard:
            onehot = F.one_hot(y.argmax(1), z.shape[1]).to(y.dtype)
            y = onehot - y.detach() + y
        parts.append(y)
        last = sl.stop
    parts.append(logits[:, last:])
    return torch.cat(parts, dim=1)


class TransformerNet(nn.Module):
    """x' = L3(x + L2(relu(L1([x, a])))), with noise a ~ N(0, I).

    The residual runs from the input of the first layer to the output of
    the second.  With ``identity_init`` the second layer starts at zero
    and the third at the identity, so the untrained map is x' = x.
    """

    def __init__(self, feature_dim: int, noise_dim: int | None = None, hidden: int = 128,
                 identity_init: bool = True, categorical_blocks: Sequence[slice] = (),
                 gumbel_temperature: float = 0.5):
        super().__init__()
        self.feature_dim = feature_dim
        self.noise_dim = feature_dim if noise_dim is None else noise_dim
        self.hidden = hidden
        self.identity_init = identity_init
        self.categorical_blocks = [slice(s.start, s.stop) for s in categorical_blocks]
        self.gumbel_temperature = gumbel_temperature
        self.l1 = nn.Linear(feature_dim + self.noise_dim, hidden)
        self.l2 = nn.Linear(hidden, feature_dim)
        self.l3 = nn.Linear(feature_dim, feature_dim)
        if identity_init:
            nn.init.zeros_(self.l2.weight)
            nn.init.zeros_(self.l2.bias)
            with torch.no_grad():
                self.l3.weight.copy_(torch.eye(feature_dim))
            nn.init.zeros_(self.l3.bias)

    def descriptor(self) -> dict:
        return {"kind": "transformer", "feature_dim": self.feature_dim,
                "noise_dim": self.noise_dim, "hidden": self.hidden,
                "identity_init": self.identity_init,
                "categorical_blocks": [[s.start, s.stop] for s in self.categorical_blocks],
                "gumbel_temperature": self.gumbel_temperature}

    def sample_noise(self, n: int, generator: torch.Generator | None = None) -> torch.Tensor:
        return torch.randn(n, self.noise_dim, generator=generator)

    def forward(self, x: torch.Tensor, noise: torch.Tensor,
                generator: torch.Generator | None = None, hard: bool = False) -> torch.Tensor:
        h = x + self.l2(F.relu(self.l1(torch.cat([x, noise], dim=1))))
        out = self.l3(h)
        if self.categorical_blocks:
            out = gumbel_softmax_output(out, self.categorical_blocks, self.gumbel_temperature,
                                        hard=hard, generator=generator)
        return out


def transform(x, transformer: TransformerNet, seed: int | None = 0,
              generator: torch.Generator | None = None, hard: bool = True) -> torch.Tensor:
    """Apply the transformer without gradients, drawing the noise from ``seed``."""
    x = _as_tensor(x)
    if generator is None:
        generator = torch.Generator().manual_seed(0 if seed is None else seed)
    with torch.no_grad():
        noise = transformer.sample_noise(x.shape[0], generator)
        return transformer(x, noise, generator=generator, hard=hard)


class ClassifierNet(nn.Module):
    """Three-layer MLP producing class logits."""

    def __init__(self, in_dim: int, n_classes: int, hidden: int = 64, role: str = "adversary"):
        super().__init__()
        self.in_dim, self.n_classes, self.hidden, self.role = in_dim, n_classes, hidden, role
        self.net = _mlp(in_dim, hidden, n_classes)

    def descriptor(self) -> dict:
        return {"kind": "classifier", "in_dim": self.in_dim, "n_classes": self.n_classes,
                "hidden": self.hidden, "role": self.role}

    def forward(self, x):
        return self.net(x)

    def zero_output(self) -> "ClassifierNet":
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)
        return self


def classify(x, classifier: ClassifierNet) -> torch.Tensor:
    """Class probability rows for a batch."""
    with torch.no_grad():
        logits = classifier(_as_tensor(x))
    if not torch.all(torch.isfinite(logits)):
        raise FloatingPointError("classifier produced non-finite logits")
    return F.softmax(logits, dim=1)


def accuracy(x, labels, classifier: ClassifierNet) -> float:
    pred = classify(x, classifier).argmax(1).numpy()
    return float(np.mean(pred == np.asarray(labels)))


class FeatureNet(nn.Module):
    """Shared embedding used both as the feature extractor on x and the projection of x'."""

    def __init__(self, in_dim: int, embed_dim: int = 32, hidden: int = 128):
        super().__init__()
        self.in_dim, self.embed_dim, self.hidden = in_dim, embed_dim, hidden
        self.net = _mlp(in_dim, hidden, embed_dim)

    def descriptor(self) -> dict:
        return {"kind": "feature", "in_dim": self.in_dim, "embed_dim": self.embed_dim,
                "hidden": self.hidden}

    def forward(self, x):
        return self.net(x)


def build_module(descriptor: dict) -> nn.Module:
    d = dict(descriptor)
    kind = d.pop("kind")
    if kind == "transformer":
        d["categorical_blocks"] = [slice(a, b) for a, b in d.get("categorical_blocks", [])]
        return TransformerNet(**d)
    if kind == "classifier":
        return ClassifierNet(**d)
    if kind == "feature":
        return FeatureNet(**d)
    from .estimators import StatisticsNet
    if kind == "statistics":
        return StatisticsNet(**d)
    raise ValueError(f"unknown module kind {kind!r}")


def copy_network(net: nn.Module, role: str | None = None) -> nn.Module:
    """Independent parameter copy (used to initialise from a pretrained net)."""
    out = copy.deepcopy(net)
    if role is not None and hasattr(out, "role"):
        out.role = role
    return out


def _batches(n: int, batch_size: int, generator: torch.Generator):
    perm = torch.randperm(n, generator=generator)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]


def train_classifier(classifier: ClassifierNet, x, y, epochs: int = 30, batch_size: int = 128,
                     lr: float = 1e-3, weight_decay: float = 1e-3, seed: int = 0) -> list[float]:
    """Plain cross-entropy training in place; returns per-epoch mean loss."""
    x, y = _as_tensor(x), torch.as_tensor(np.asarray(y), dtype=torch.long)
    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(classifier.parameters(), lr=lr, weight_decay=weight_decay)
    history = []
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in _batches(len(x), batch_size, g):
            loss = F.cross_entropy(classifier(x[idx]), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
    if len(history) > 1 and history[-1] >= history[0]:
        log.warning("classifier training loss did not decrease (%.4f -> %.4f)",
                    history[0], history[-1])
    return history


def pretrain_classifier(x, y, n_classes: int, epochs: int = 30, batch_size: int = 128,
                        lr: float = 1e-3, weight_decay: float = 1e-3, hidden: int = 64,
                        seed: int = 0, role: str = "adversary") -> tuple[ClassifierNet, list[float]]:
    """Fit a fresh classifier on original data; the result initialises phi / psi."""
    torch.manual_seed(seed)
    clf = ClassifierNet(_as_tensor(x).shape[1], n_classes, hidden, role)
    history = train_classifier(clf, x, y, epochs, batch_size, lr, weight_decay, seed)
    return clf, history


def pretrain_feature_extractor(x, epochs: int = 30, batch_size: int = 128,
                               temperature: float = 0.1, embed_dim: int = 32, hidden: int = 128,
                               lr: float = 1e-3, weight_decay: float = 1e-3, seed: int = 0
                               ) -> tuple[FeatureNet, list[float]]:
    """Contrastive pretraining on original data.

    Each sample is its own anchor and positive; the rest of the batch
    are negatives, so the net learns to spread the samples apart.
    """
    x = _as_tensor(x)
    if batch_size < 2:
        raise ValueError("batch_size must be at least 2")
    torch.manual_seed(seed)
    net = FeatureNet(x.shape[1], embed_dim, hidden)
    g = torch.Generator().manual_seed(seed)
    opt = torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=weight_decay)
    history = []
    for _ in range(epochs):
        total, count = 0.0, 0
        for idx in _batches(len(x), batch_size, g):
            if len(idx) < 2:
                continue
            emb = net(x[idx])
            loss, _ = infonce_batch(emb, emb, temperature)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            count += len(idx)
        history.append(total / count)
    with torch.no_grad():
        emb = F.normalize(net(x[:512]), dim=1)
        cos = emb @ emb.T
        off = cos[~torch.eye(len(emb), dtype=torch.bool)]
        if len(off) and float(off.min()) > 0.999:
            log.warning("feature extractor collapsed: all pairwise cosines > 0.999")
    return net, history


# -- checkpoints --------------------------------------------------------------

def save_checkpoint(directory: str | os.PathLike, modules: dict[str, nn.Module],
                    metadata: dict | None = None, extra_state: dict | None = None) -> Path:
    """Write ``params.pt`` (state dicts plus ``extra_state``) and ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = {"modules": {k: m.state_dict() for k, m in modules.items()},
            "extra": extra_state or {}}
    torch.save(blob, directory / "params.pt")
    meta = {"architecture": {k: m.descriptor() for k, m in modules.items()}}
    meta.update(metadata or {})
    with open(directory / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_checkpoint(directory: str | os.PathLike) -> tuple[dict[str, nn.Module], dict, dict]:
    """Rebuild modules from ``meta.json`` and load their parameters."""
    directory = Path(directory)
    with open(directory / "meta.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    blob = torch.load(directory / "params.pt", weights_only=False)
    modules = {}
    for k, desc in meta["architecture"].items():
        m = build_module(desc)
        m.load_state_dict(blob["modules"][k])
        modules[k] = m
    return modules, meta, blob.get("extra", {})
