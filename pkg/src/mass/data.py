"""Datasets, manifests, synthetic generation and tabular encoding.

A dataset on disk is a UTF-8 CSV (header row) holding feature columns,
one integer label column per attribute and a ``split`` column, plus a
JSON sidecar describing the attributes::

    {
      "csv": "data.csv",
      "feature_columns": ["x0", "x1"],
      "attributes": [{"name": "S", "role": "sensitive", "cardinality": 2}],
      "split_column": "split",
      "latent_columns": ["F"]
    }

``latent_columns`` are optional integer ground-truth columns that are
never shown to training; evaluation may probe them.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .joint import DiscreteJoint

ROLES = ("sensitive", "useful", "concealed")


class ManifestError(ValueError):
    """Manifest is malformed or disagrees with the data it points to."""


class LabelValidationError(ValueError):
    """A label falls outside its attribute's declared range."""

    def __init__(self, attribute: str, row: int, value):
        self.attribute, self.row, self.value = attribute, row, value
        super().__init__(
            f"attribute {attribute!r}: label {value!r} at row {row} is out of range")


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    role: str
    cardinality: int

    def __post_init__(self):
        if self.role not in ROLES:
            raise ManifestError(f"attribute {self.name!r}: unknown role {self.role!r}")
        if int(self.cardinality) < 1:
            raise ManifestError(f"attribute {self.name!r}: cardinality must be positive")

    @property
    def trainable(self) -> bool:
        return self.role in ("sensitive", "useful")


@dataclass
class DatasetManifest:
    feature_dim: int
    attributes: list[AttributeSpec]
    source: str
    feature_columns: list[str] | None = None
    split_column: str = "split"
    latent_columns: list[str] = field(default_factory=list)

    def __post_init__(self):
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ManifestError(f"duplicate attribute names: {names}")
        for a in self.attributes:
            if a.trainable and a.cardinality < 2:
                raise ManifestError(
                    f"attribute {a.name!r} takes part in training but has "
                    f"cardinality {a.cardinality}")

    def attribute(self, name: str) -> AttributeSpec:
        for a in self.attributes:
            if a.name == name:
                return a
        raise KeyError(name)

    def by_role(self, role: str) -> list[AttributeSpec]:
        return [a for a in self.attributes if a.role == role]

    def with_roles(self, roles: Mapping[str, str]) -> "DatasetManifest":
        """Copy with some attributes re-assigned to different roles."""
        unknown = set(roles) - {a.name for a in self.attributes}
        if unknown:
            raise ManifestError(f"role assignment references unknown attributes {sorted(unknown)}")
        attrs = [AttributeSpec(a.name, roles.get(a.name, a.role), a.cardinality)
                 for a in self.attributes]
        return DatasetManifest(self.feature_dim, attrs, self.source,
                               self.feature_columns, self.split_column,
                               list(self.latent_columns))

    def to_dict(self) -> dict:
        return {
            "csv": self.source,
            "feature_dim": self.feature_dim,
            "feature_columns": self.feature_columns,
            "split_column": self.split_column,
            "latent_columns": list(self.latent_columns),
            "attributes": [
                {"name": a.name, "role": a.role, "cardinality": a.cardinality}
                for a in self.attributes
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | os.PathLike | None = None) -> "DatasetManifest":
        try:
            attrs = [AttributeSpec(a["name"], a["role"], int(a["cardinality"]))
                     for a in d["attributes"]]
            source = d["csv"]
        except KeyError as e:
            raise ManifestError(f"manifest is missing field {e}") from None
        if base_dir is not None and not os.path.isabs(source):
            source = str(Path(base_dir) / source)
        cols = d.get("feature_columns")
        dim = d.get("feature_dim", len(cols) if cols else None)
        if dim is None:
            raise ManifestError("manifest needs feature_dim or feature_columns")
        return cls(int(dim), attrs, source, list(cols) if cols else None,
                   d.get("split_column", "split"), list(d.get("latent_columns", [])))

    @classmethod
    def read(cls, path: str | os.PathLike) -> "DatasetManifest":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)


@dataclass(frozen=True, eq=False)
class Dataset:
    """In-memory dataset: feature matrix, one label column per attribute, split."""

    manifest: DatasetManifest
    features: np.ndarray
    labels: Mapping[str, np.ndarray]
    train_index: np.ndarray
    eval_index: np.ndarray
    latent: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.features.shape[1] != self.manifest.feature_dim:
            raise ManifestError(
                f"features have shape {self.features.shape}, "
                f"manifest says feature_dim={self.manifest.feature_dim}")
        if not np.all(np.isfinite(self.features)):
            raise ManifestError("features contain non-finite values")
        for a in self.manifest.attributes:
            if a.name not in self.labels:
                raise ManifestError(f"no label column for attribute {a.name!r}")
            col = self.labels[a.name]
            if col.shape != (n,):
                raise ManifestError(f"label column {a.name!r} has wrong length")
            bad = np.flatnonzero((col < 0) | (col >= a.cardinality))
            if bad.size:
                raise LabelValidationError(a.name, int(bad[0]), int(col[bad[0]]))
        both = np.concatenate([self.train_index, self.eval_index])
        if both.size != n or np.unique(both).size != n:
            raise ManifestError("train and eval splits must be disjoint and cover every row")
        self.features.setflags(write=False)
        for arr in (*self.labels.values(), self.train_index, self.eval_index):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.manifest.feature_dim

    @cached_property
    def class_counts(self) -> dict[str, np.ndarray]:
        return {a.name: np.bincount(self.labels[a.name], minlength=a.cardinality)
                for a in self.manifest.attributes}

    def split(self, which: str) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """Features and labels restricted to ``"train"`` or ``"eval"``."""
        idx = {"train": self.train_index, "eval": self.eval_index}[which]
        return self.features[idx], {k: v[idx] for k, v in self.labels.items()}

    def with_roles(self, roles: Mapping[str, str]) -> "Dataset":
        return Dataset(self.manifest.with_roles(roles), self.features, dict(self.labels),
                       self.train_index, self.eval_index, dict(self.latent))


def load_dataset(manifest: DatasetManifest | str | os.PathLike) -> Dataset:
    """Read the CSV a manifest points to and validate it."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.read(manifest)
    path = Path(manifest.source)
    if not path.exists():
        raise ManifestError(f"data file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    col = {name: i for i, name in enumerate(header)}
    fcols = manifest.feature_columns or [f"x{i}" for i in range(manifest.feature_dim)]
    if len(fcols) != manifest.feature_dim:
        raise ManifestError("feature_columns length disagrees with feature_dim")
    needed = (list(fcols) + [a.name for a in manifest.attributes] + [manifest.split_column]
              + list(manifest.latent_columns))
    missing = [c for c in needed if c not in col]
    if missing:
        raise ManifestError(f"{path}: missing columns {missing}")
    try:
        feats = np.array([[float(r[col[c]]) for c in fcols] for r in rows], dtype=np.float64)
    except ValueError as e:
        raise ManifestError(f"{path}: non-numeric feature value ({e})") from None
    feats = feats.reshape(len(rows), len(fcols))
    labels = {}
    for a in manifest.attributes:
        vals = []
        for i, r in enumerate(rows):
            try:
                vals.append(int(r[col[a.name]]))
            except ValueError:
                raise LabelValidationError(a.name, i, r[col[a.name]]) from None
        labels[a.name] = np.asarray(vals, dtype=np.int64)
    latent = {}
    for name in manifest.latent_columns:
        try:
            latent[name] = np.asarray([int(r[col[name]]) for r in rows], dtype=np.int64)
        except ValueError:
            raise ManifestError(f"{path}: latent column {name!r} must hold integers") from None
    split = np.array([r[col[manifest.split_column]] for r in rows])
    odd = set(np.unique(split)) - {"train", "eval"}
    if odd:
        raise ManifestError(f"{path}: split values must be train/eval, found {sorted(odd)}")
    return Dataset(manifest, feats, labels,
                   np.flatnonzero(split == "train"), np.flatnonzero(split == "eval"), latent)


def save_dataset(dataset: Dataset, directory: str | os.PathLike,
                 name: str = "data") -> Path:
    """Write ``<name>.csv`` and ``<name>.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m = dataset.manifest
    fcols = m.feature_columns or [f"x{i}" for i in range(m.feature_dim)]
    split = np.empty(len(dataset), dtype=object)
    split[dataset.train_index] = "train"
    split[dataset.eval_index] = "eval"
    csv_path = directory / f"{name}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        hidden = list(dataset.latent)
        w.writerow(fcols + [a.name for a in m.attributes] + [m.split_column] + hidden)
        for i in range(len(dataset)):
            w.writerow([repr(float(v)) for v in dataset.features[i]]
                       + [int(dataset.labels[a.name][i]) for a in m.attributes]
                       + [split[i]] + [int(dataset.latent[h][i]) for h in hidden])
    meta = DatasetManifest(m.feature_dim, list(m.attributes), csv_path.name,
                           list(fcols), m.split_column, hidden).to_dict()
    man_path = directory / f"{name}.json"
    with open(man_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    return man_path


# -- synthetic data ---------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Latent categorical joint plus a noisy linear emission into feature space.

    Each latent triple is one-hot encoded, concatenated, multiplied by a
    fixed random orthogonal map (scaled by ``signal_scale``) and perturbed
    by Gaussian noise of scale ``noise_scale``.  ``roles`` assigns a role
    to each latent axis; axes without a role are kept as latent ground
    truth only.
    """

    joint: DiscreteJoint
    sample_count: int
    seed: int = 0
    noise_scale: float = 0.1
    signal_scale: float = 1.0
    roles: dict[str, str] = field(default_factory=dict)
    feature_dim: int | None = None
    eval_fraction: float = 0.2
    unit_norm: bool = False

    @classmethod
    def from_dict(cls, d: Mapping) -> "SyntheticSpec":
        axes = list(d["axes"])
        if "probabilities" in d:
            joint = DiscreteJoint(tuple(axes), np.asarray(d["probabilities"], dtype=float))
        else:
            joint = DiscreteJoint.from_counts(axes, d["weights"])
        keys = ("sample_count", "seed", "noise_scale", "signal_scale",
                "roles", "feature_dim", "eval_fraction", "unit_norm")
        return cls(joint=joint, **{k: d[k] for k in keys if k in d})

    @classmethod
    def read(cls, path: str | os.PathLike) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, DiscreteJoint]:
    """Sample a dataset from ``spec``; returns it with the ground-truth latent joint."""
    joint = spec.joint
    for k, name in enumerate(joint.axis_names):
        marg = joint.marginal_table(name)
        if np.any(marg <= 0):
            dead = np.flatnonzero(marg <= 0).tolist()
            raise ValueError(f"degenerate joint: axis {name!r} has zero-probability classes {dead}")
    if spec.sample_count < 2:
        raise ValueError("sample_count must be at least 2")
    unknown = set(spec.roles) - set(joint.axis_names)
    if unknown:
        raise ValueError(f"roles reference unknown axes {sorted(unknown)}")

    rng = np.random.default_rng(spec.seed)
    flat = joint.probabilities.ravel()
    cells = rng.choice(flat.size, size=spec.sample_count, p=flat / flat.sum())
    latent = np.stack(np.unravel_index(cells, joint.shape), axis=1)

    cards = joint.shape
    latent_dim = int(sum(cards))
    onehot = np.zeros((spec.sample_count, latent_dim))
    offset = 0
    for k, c in enumerate(cards):
        onehot[np.arange(spec.sample_count), offset + latent[:, k]] = 1.0
        offset += c
    dim = spec.feature_dim or latent_dim
    q, r = np.linalg.qr(rng.standard_normal((max(dim, latent_dim), max(dim, latent_dim))))
    q = q * np.sign(np.diag(r))
    mixing = q[:latent_dim, :dim] * spec.signal_scale
    x = onehot @ mixing + spec.noise_scale * rng.standard_normal((spec.sample_count, dim))
    if spec.unit_norm:
        x = x / np.linalg.norm(x, axis=1, keepdims=True)

    order = rng.permutation(spec.sample_count)
    n_eval = int(round(spec.eval_fraction * spec.sample_count))
    eval_idx, train_idx = np.sort(order[:n_eval]), np.sort(order[n_eval:])

    attrs, labels, hidden = [], {}, {}
    for k, name in enumerate(joint.axis_names):
        col = latent[:, k].astype(np.int64)
        if name in spec.roles:
            attrs.append(AttributeSpec(name, spec.roles[name], cards[k]))
            labels[name] = col
        else:
            hidden[name] = col
    manifest = DatasetManifest(dim, attrs, source=f"synthetic(seed={spec.seed})",
                               latent_columns=list(hidden))
    return Dataset(manifest, x, labels, train_idx, eval_idx, hidden), joint


# -- tabular encoding ---------------------------------------------------------

@dataclass
class TabularEncoder:
    """One-hot categorical columns, range-normalised continuous columns.

    ``roles`` maps every column to ``"categorical"``, ``"continuous"`` or
    ``"label"``.  Label columns never enter the feature matrix; they come
    back as integer class vectors.
    """

    roles: dict[str, str]
    categories: dict[str, list] = field(default_factory=dict)
    ranges: dict[str, tuple[float, float]] = field(default_factory=dict)

    def fit(self, table: Mapping[str, Sequence]) -> "TabularEncoder":
        for name, role in self.roles.items():
            col = list(table[name])
            if role in ("categorical", "label"):
                self.categories[name] = sorted(set(col), key=lambda v: (str(type(v)), v))
            elif role == "continuous":
                arr = np.asarray(col, dtype=np.float64)
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"continuous column {name!r} has non-finite values")
                lo, hi = float(arr.min()), float(arr.max())
                if hi == lo:
                    raise ValueError(f"continuous column {name!r} is constant (zero range)")
                self.ranges[name] = (lo, hi)
            else:
                raise ValueError(f"column {name!r}: unknown role {role!r}")
        return self

    @property
    def feature_columns(self) -> list[str]:
        return [c for c, r in self.roles.items() if r != "label"]

    @property
    def blocks(self) -> list[tuple[str, slice, str]]:
        """(column, slice into the feature vector, kind) for every feature column."""
        out, start = [], 0
        for c in self.feature_columns:
            width = len(self.categories[c]) if self.roles[c] == "categorical" else 1
            out.append((c, slice(start, start + width), self.roles[c]))
            start += width
        return out

    @property
    def categorical_blocks(self) -> list[slice]:
        return [s for _, s, kind in self.blocks if kind == "categorical"]

    @property
    def width(self) -> int:
        b = self.blocks
        return b[-1][1].stop if b else 0

    def _codes(self, name: str, col) -> np.ndarray:
        lookup = {v: i for i, v in enumerate(self.categories[name])}
        try:
            return np.array([lookup[v] for v in col], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"column {name!r}: unseen category {e.args[0]!r}") from None

    def transform(self, table: Mapping[str, Sequence]) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        n = len(next(iter(table[c] for c in self.roles)))
        x = np.zeros((n, self.width))
        for name, sl, kind in self.blocks:
            if kind == "categorical":
                x[np.arange(n), sl.start + self._codes(name, table[name])] = 1.0
            else:
                lo, hi = self.ranges[name]
                x[:, sl.start] = (np.asarray(table[name], dtype=np.float64) - lo) / (hi - lo)
        labels = {c: self._codes(c, table[c]) for c, r in self.roles.items() if r == "label"}
        return x, labels

    def inverse_transform(self, x: np.ndarray) -> dict[str, list]:
        """Decode one-hot blocks by argmax and undo the range scaling."""
        x = np.asarray(x)
        out = {}
        for name, sl, kind in self.blocks:
            if kind == "categorical":
                codes = np.argmax(x[:, sl], axis=1)
                out[name] = [self.categories[name][i] for i in codes]
            else:
                lo, hi = self.ranges[name]
                out[name] = list(x[:, sl.start] * (hi - lo) + lo)
        return out


def encode_tabular(table: Mapping[str, Sequence], roles: Mapping[str, str]
                   ) -> tuple[np.ndarray, dict[str, np.ndarray], TabularEncoder]:
    """Fit a :class:`TabularEncoder` on ``table`` and encode it."""
    enc = TabularEncoder(dict(roles)).fit(table)
    x, labels = enc.transform(table)
    return x, labels, enc
