"""Command-line entry point: ``mass <subcommand> ...``.

Exit codes: 0 success, 2 infeasible constraints, 3 invalid input,
4 numerical failure, 1 anything else.  Output directories default to
``$MASS_OUTPUT_ROOT/<subcommand>`` (``./mass_runs`` when unset).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bounds import ConstraintConfig, check_feasibility
from .data import (LabelValidationError, ManifestError, SyntheticSpec, generate_synthetic,
                   load_dataset, save_dataset)
from .evaluation import EvalConfig, evaluate, load_report, plot_sweep, report
from .scenario import (OUTPUT_ROOT_ENV, ScenarioConfig, StageError, acceptance_spec,
                       default_constraints, default_output_root, run_scenario)
from .training import (VARIANTS, InfeasibleConstraintsError, NumericalFailure, Pretrained,
                       TrainConfig, fit, load_state, pretrain)

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3, 4

log = logging.getLogger("mass")


class CliValidationError(ValueError):
    pass


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliValidationError(f"{path}: no such file") from None
    except json.JSONDecodeError as e:
        raise CliValidationError(f"{path}: invalid JSON ({e})") from None


def _out_dir(args, stage: str) -> Path:
    return Path(args.out) if args.out else default_output_root() / stage


def _train_config(args) -> TrainConfig:
    d = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        d["seed"] = args.seed
    return TrainConfig.from_dict(d)


def _eval_config(args) -> EvalConfig:
    d = _read_json(args.eval_config) if args.eval_config else {}
    bad = set(d) - set(EvalConfig.__dataclass_fields__)
    if bad:
        raise CliValidationError(f"unknown evaluation config keys {sorted(bad)}")
    if args.seed is not None:
        d["seed"] = args.seed
    return EvalConfig(**d)


def _dataset(args):
    ds = load_dataset(args.data)
    if getattr(args, "roles", None):
        ds = ds.with_roles(_read_json(args.roles))
    return ds


def _constraints(args, dataset) -> ConstraintConfig:
    if args.constraints:
        return ConstraintConfig.from_dict(_read_json(args.constraints))
    return default_constraints(dataset)


# -- subcommands ----------------------------------------------------------------

def cmd_audit(args) -> int:
    ds = _dataset(args)
    feas = check_feasibility(_constraints(args, ds), ds)
    print(feas.to_json())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "feasibility.json").write_text(feas.to_json() + "\n", encoding="utf-8")
    return EXIT_OK if feas.feasible else EXIT_INFEASIBLE


def cmd_synth(args) -> int:
    if args.spec:
        spec = SyntheticSpec.from_dict(_read_json(args.spec))
    else:
        spec = acceptance_spec(sample_count=args.samples or 20000)
    if args.seed is not None:
        spec.seed = args.seed
    if args.samples is not None:
        spec.sample_count = args.samples
    ds, _ = generate_synthetic(spec)
    path = save_dataset(ds, _out_dir(args, "synth"), args.name)
    print(path)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    ds = _dataset(args)
    pre = pretrain(ds, _train_config(args))
    out = pre.save(_out_dir(args, "pretrain"))
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _dataset(args)
    cfg = _train_config(args)
    cons = _constraints(args, ds)
    out = _out_dir(args, "train")
    pre = Pretrained.load(args.pretrained) if args.pretrained else None
    if pre is None and args.resume is None:
        pre = pretrain(ds, cfg)
        pre.save(out / "pretrain")
    res = fit(ds, cons, cfg, variant=args.variant, pretrained=pre, out_dir=out,
              force=args.force, resume_from=args.resume)
    print(json.dumps(res.report["attributes"], indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = _dataset(args)
    state = load_state(args.checkpoint)
    pre = Pretrained.load(args.pretrained)
    metrics = evaluate(state, ds, pre, _eval_config(args), retrain=not args.no_retrain)
    report(metrics, _out_dir(args, "evaluate"), "metrics")
    print(metrics.table())
    return EXIT_OK


def cmd_report(args) -> int:
    reports = [load_report(p) for p in args.metrics]
    if args.plot:
        if not args.values or len(args.values) != len(reports):
            raise CliValidationError("--plot needs one --values entry per metrics file")
        print(plot_sweep(args.values, reports, args.attribute, args.evaluator, args.plot))
        return EXIT_OK
    for r in reports:
        if args.format == "csv":
            sys.stdout.write(r.to_csv())
        elif args.format == "json":
            print(json.dumps(r.to_dict(), indent=2))
        else:
            print(r.table())
    return EXIT_OK


def cmd_run(args) -> int:
    if args.preset:
        cfg = ScenarioConfig.acceptance(seed=args.seed or 0)
    elif args.config:
        try:
            cfg = ScenarioConfig.read(args.config)
        except FileNotFoundError:
            raise CliValidationError(f"{args.config}: no such file") from None
    else:
        raise CliValidationError("run needs --config or --preset")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.variant:
        cfg.variant = args.variant
    if args.m is not None:
        if cfg.constraints is None or not cfg.constraints.m:
            raise CliValidationError("--m needs a scenario with explicit suppression budgets")
        cfg.constraints = ConstraintConfig({k: args.m for k in cfg.constraints.m},
                                           dict(cfg.constraints.n), cfg.constraints.lam)
    if args.out:
        cfg.output_dir = args.out
    elif cfg.output_dir is None:
        cfg.output_dir = str(default_output_root() / "run")
    cfg.force = cfg.force or args.force
    try:
        res = run_scenario(cfg)
    except InfeasibleConstraintsError as e:
        print(e.report.to_json())
        print(f"refusing to train: {e} (pass --force to override)", file=sys.stderr)
        return EXIT_INFEASIBLE
    print(res.metrics.table())
    print(f"artifacts: {res.output_dir / 'artifacts.json'}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mass",
        description="Suppress sensitive attributes while preserving useful information.",
        epilog=f"Output directories default to ${OUTPUT_ROOT_ENV}/<subcommand> "
               "(./mass_runs when unset).  Exit codes: 0 ok, 2 infeasible, "
               "3 invalid input, 4 numerical failure.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="SUBCOMMAND")

    def common(sp, data=True, seed=True, out=True):
        if data:
            sp.add_argument("--data", required=True, help="dataset manifest (JSON)")
            sp.add_argument("--roles", help="JSON file mapping attribute -> role override")
        if seed:
            sp.add_argument("--seed", type=int, help="override the seed in the config")
        if out:
            sp.add_argument("--out", help="output directory")

    a = sub.add_parser("audit", help="check (m, n) against the feasibility conditions")
    common(a, seed=False)
    a.add_argument("--constraints", "--config", dest="constraints",
                   help="constraint file (JSON); default m=0, n=max floor")
    a.set_defaults(func=cmd_audit)

    s = sub.add_parser("synth", help="generate a synthetic dataset and its manifest")
    common(s, data=False)
    s.add_argument("--spec", help="synthetic spec (JSON); default is the built-in "
                                  "S/U/F acceptance spec")
    s.add_argument("--samples", type=int, help="override the sample count")
    s.add_argument("--name", default="data", help="file stem for the CSV and manifest")
    s.set_defaults(func=cmd_synth)

    pt = sub.add_parser("pretrain", help="fit initial classifiers and the feature extractor")
    common(pt)
    pt.add_argument("--config", help="train config (JSON)")
    pt.set_defaults(func=cmd_pretrain)

    t = sub.add_parser("train", help="train the transformer against the constraints")
    common(t)
    t.add_argument("--constraints", help="constraint file (JSON); default m=0, n=max floor")
    t.add_argument("--config", help="train config (JSON)")
    t.add_argument("--variant", default="mass", choices=VARIANTS, help="objective variant")
    t.add_argument("--pretrained", help="pretrain directory (pretrains afresh if omitted)")
    t.add_argument("--resume", help="checkpoint directory to resume from")
    t.add_argument("--force", action="store_true", help="train even if constraints are infeasible")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="accuracy / NAG report for a trained transformer")
    common(e)
    e.add_argument("--checkpoint", required=True, help="training checkpoint directory")
    e.add_argument("--pretrained", required=True, help="pretrain directory")
    e.add_argument("--eval-config", help="evaluation config (JSON)")
    e.add_argument("--no-retrain", action="store_true", help="skip the retrained attacker")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="print or plot saved metrics")
    r.add_argument("metrics", nargs="+", help="metrics.json files")
    r.add_argument("--format", choices=("table", "csv", "json"), default="table",
                   help="output format")
    r.add_argument("--plot", help="write a sweep plot (PNG) to this path")
    r.add_argument("--values", type=float, nargs="+", help="sweep value per metrics file")
    r.add_argument("--attribute", default="S", help="attribute to plot")
    r.add_argument("--evaluator", default="retrained", help="evaluator to plot")
    r.set_defaults(func=cmd_report)

    rn = sub.add_parser("run", help="audit, pretrain, train, evaluate and report in one go")
    rn.add_argument("--config", help="scenario file (JSON)")
    rn.add_argument("--preset", choices=("acceptance",), help="built-in scenario")
    rn.add_argument("--variant", choices=VARIANTS, help="override the variant")
    rn.add_argument("--m", type=float, help="set every suppression budget to this value")
    rn.add_argument("--seed", type=int, help="override train and evaluation seeds")
    rn.add_argument("--out", help="output directory")
    rn.add_argument("--force", action="store_true", help="run even if constraints are infeasible")
    rn.set_defaults(func=cmd_run)
    return p


def _exit_code(err: BaseException) -> int:
    if isinstance(err, StageError):
        err = err.cause
    if isinstance(err, InfeasibleConstraintsError):
        return EXIT_INFEASIBLE
    if isinstance(err, (NumericalFailure, FloatingPointError)):
        return EXIT_NUMERICAL
    if isinstance(err, (CliValidationError, ManifestError, LabelValidationError, ValueError,
                        KeyError, FileNotFoundError)):
        return EXIT_VALIDATION
    return EXIT_ERROR


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleConstraintsError as e:
        print(e.report.to_json())
        print(f"refusing to train: {e} (pass --force to override)", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception as e:
        where = f"[{e.stage}] " if isinstance(e, StageError) else ""
        print(f"mass {args.command}: {where}{e}", file=sys.stderr)
        return _exit_code(e)


if __name__ == "__main__":
    sys.exit(main())
