"""End-to-end runs: audit, pretrain, train, evaluate and report in one call.

A scenario file is JSON::

    {
      "manifest": "data/data.json",          # or "synthetic": {...spec...}
      "roles": {"U": "concealed"},
      "constraints": {"m": {"S": 0.0}},        # omitted -> defaults
      "train": {"epochs": 20},
      "evaluation": {"epochs": 30},
      "variant": "mass",
      "output_dir": "runs/demo"
    }

Missing constraints default to m = 0 for every sensitive attribute and
the largest feasible floor n for every useful one, with lambda = 1.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .bounds import ConstraintConfig, FeasibilityReport, check_feasibility, max_preservation_floor
from .data import Dataset, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .evaluation import EvalConfig, MetricsReport, evaluate, report
from .joint import DiscreteJoint
from .training import VARIANTS, InfeasibleConstraintsError, TrainConfig, fit, pretrain

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "MASS_OUTPUT_ROOT"
STAGES = ("audit", "pretrain", "train", "evaluate", "report")

# Settings under which the synthetic suppress-S / keep-U run converges in
# well under a minute per variant on one CPU core.
ACCEPTANCE_TRAIN = {"epochs": 20, "batch_size": 128, "learning_rate": 1e-3,
                    "classifier_learning_rate": 5e-3, "adversary_steps_per_main_step": 5,
                    "temperature": 1.0, "pretrain_epochs": 20}


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "mass_runs"))


def correlated_joint(rho: float = 0.8) -> DiscreteJoint:
    """S (binary) x U (4-class, independent of S) x F (8-class).

    F = 2U + B where the bit B equals S with probability ``rho``, so F
    carries both U and part of S.
    """
    p = np.zeros((2, 4, 8))
    for s in range(2):
        for u in range(4):
            for b in range(2):
                p[s, u, 2 * u + b] = 0.5 * 0.25 * (rho if b == s else 1.0 - rho)
    return DiscreteJoint(("S", "U", "F"), p)


def acceptance_spec(seed: int = 0, sample_count: int = 20000, rho: float = 0.8) -> SyntheticSpec:
    return SyntheticSpec(correlated_joint(rho), sample_count=sample_count, seed=seed,
                         noise_scale=0.6, roles={"S": "sensitive", "U": "concealed"})


def default_constraints(dataset: Dataset, lam: float = 1.0) -> ConstraintConfig:
    m = {a.name: 0.0 for a in dataset.manifest.by_role("sensitive")}
    base = ConstraintConfig(m=m, lam=lam)
    n = {a.name: max_preservation_floor(a.name, base, dataset)
         for a in dataset.manifest.by_role("useful")}
    return ConstraintConfig(m=m, n=n, lam=lam)


class StageError(RuntimeError):
    """A pipeline stage failed; ``cause`` keeps the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage, self.cause = stage, cause
        super().__init__(f"stage {stage!r} failed: {cause}")


@dataclass
class ScenarioConfig:
    manifest: str | None = None
    synthetic: SyntheticSpec | None = None
    roles: dict[str, str] = field(default_factory=dict)
    constraints: ConstraintConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    variant: str = "mass"
    output_dir: str | None = None
    force: bool = False

    def __post_init__(self):
        if (self.manifest is None) == (self.synthetic is None):
            raise ValueError("give exactly one of manifest and synthetic")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | os.PathLike | None = None) -> "ScenarioConfig":
        known = {"manifest", "synthetic", "roles", "constraints", "train", "evaluation",
                 "variant", "output_dir", "force"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario keys {sorted(unknown)}")
        manifest = d.get("manifest")
        if manifest is not None and base_dir is not None and not os.path.isabs(manifest):
            manifest = str(Path(base_dir) / manifest)
        synth = d.get("synthetic")
        if isinstance(synth, str):
            path = Path(base_dir or ".") / synth
            synth = SyntheticSpec.read(path)
        elif synth is not None:
            synth = SyntheticSpec.from_dict(synth)
        cons = d.get("constraints")
        ev = dict(d.get("evaluation", {}))
        bad = set(ev) - set(EvalConfig.__dataclass_fields__)
        if bad:
            raise ValueError(f"unknown evaluation config keys {sorted(bad)}")
        return cls(manifest=manifest, synthetic=synth, roles=dict(d.get("roles", {})),
                   constraints=ConstraintConfig.from_dict(cons) if cons is not None else None,
                   train=TrainConfig.from_dict(dict(d.get("train", {}))),
                   evaluation=EvalConfig(**ev), variant=d.get("variant", "mass"),
                   output_dir=d.get("output_dir"), force=bool(d.get("force", False)))

    @classmethod
    def read(cls, path: str | os.PathLike) -> "ScenarioConfig":
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh), base_dir=path.parent)

    @classmethod
    def acceptance(cls, seed: int = 0, variant: str = "mass",
                   m: float = 0.0, output_dir: str | None = None) -> "ScenarioConfig":
        return cls(synthetic=acceptance_spec(seed), constraints=ConstraintConfig(m={"S": m}),
                   train=TrainConfig(**ACCEPTANCE_TRAIN, seed=seed),
                   evaluation=EvalConfig(seed=seed), variant=variant, output_dir=output_dir)

    def with_seed(self, seed: int) -> "ScenarioConfig":
        out = ScenarioConfig(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.train = TrainConfig(**{**asdict(self.train), "seed": seed})
        out.evaluation = EvalConfig(**{**asdict(self.evaluation), "seed": seed})
        return out

    def to_dict(self) -> dict:
        d = {"roles": self.roles, "train": asdict(self.train),
             "evaluation": asdict(self.evaluation), "variant": self.variant,
             "output_dir": self.output_dir, "force": self.force}
        if self.manifest is not None:
            d["manifest"] = self.manifest
        else:
            s = self.synthetic
            d["synthetic"] = {"axes": list(s.joint.axis_names),
                              "probabilities": s.joint.probabilities.tolist(),
                              "sample_count": s.sample_count, "seed": s.seed,
                              "noise_scale": s.noise_scale, "signal_scale": s.signal_scale,
                              "roles": dict(s.roles), "feature_dim": s.feature_dim,
                              "eval_fraction": s.eval_fraction, "unit_norm": s.unit_norm}
        if self.constraints is not None:
            d["constraints"] = self.constraints.to_dict()
        return d


@dataclass
class ScenarioResult:
    output_dir: Path
    feasibility: FeasibilityReport
    metrics: MetricsReport
    train_report: dict
    files: list[str]


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")
    return path


def write_file_manifest(out: Path) -> Path:
    """List every file under ``out`` with its size and SHA-256."""
    entries = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "artifacts.json":
            entries.append({"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size,
                            "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    return _write_json(out / "artifacts.json", {"files": entries})


def load_scenario_dataset(config: ScenarioConfig, out: Path | None = None) -> Dataset:
    if config.synthetic is not None:
        ds, _ = generate_synthetic(config.synthetic)
        if out is not None:
            save_dataset(ds, out / "data", "data")
    else:
        ds = load_dataset(config.manifest)
    return ds.with_roles(config.roles) if config.roles else ds


def run_scenario(config: ScenarioConfig) -> ScenarioResult:
    """Run every stage in order, writing artifacts under the output directory.

    Infeasible constraints stop the run after the audit unless ``force``
    is set; that case raises ``InfeasibleConstraintsError`` directly.
    Other failures are wrapped in ``StageError`` naming the stage.  Files
    written before a failure are kept, and ``artifacts.json`` is refreshed
    either way.
    """
    out = Path(config.output_dir) if config.output_dir else default_output_root() / "run"
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "scenario.json", config.to_dict())
    stage = "audit"
    try:
        dataset = load_scenario_dataset(config, out)
        constraints = config.constraints or default_constraints(dataset)
        feas = check_feasibility(constraints, dataset)
        _write_json(out / "audit" / "feasibility.json", feas.to_dict())
        if not feas.feasible and not config.force:
            raise InfeasibleConstraintsError(feas)

        stage = "pretrain"
        pre = pretrain(dataset, config.train)
        pre.save(out / "pretrain")

        stage = "train"
        res = fit(dataset, constraints, config.train, variant=config.variant, pretrained=pre,
                  out_dir=out / "train", force=config.force)

        stage = "evaluate"
        metrics = evaluate(res.state, dataset, pre, config.evaluation)

        stage = "report"
        report(metrics, out / "report", "metrics")
        with open(out / "report" / "metrics.txt", "w", encoding="utf-8") as fh:
            fh.write(metrics.table() + "\n")
    except InfeasibleConstraintsError:
        write_file_manifest(out)
        raise
    except Exception as e:
        write_file_manifest(out)
        raise StageError(stage, e) from e
    write_file_manifest(out)
    with open(out / "artifacts.json", encoding="utf-8") as fh:
        files = [f["path"] for f in json.load(fh)["files"]]
    return ScenarioResult(out, feas, metrics, res.report, files)
