"""Command-line entry point: ``rcl simulate | estimate | run | verify``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .data import write_csv, write_truth
from .estimators import EstimatorSpec
from .learners import ClassifierSpec, RegressorSpec
from .runner import DEFAULT_ESTIMATORS, OUTPUT_DIR_ENV, ExperimentConfig, LearnerCombo, load_config, run
from .scores import ScoreKind
from .simulate import DgpConfig, generate
from .verify import PerturbationDirection, fd_orthogonality

log = logging.getLogger("rcl")

_REG_ALIASES = {"lasso": "lasso", "ridge": "ridge", "rf": "random_forest", "random_forest": "random_forest"}
_CLS_ALIASES = {"lr": "logistic", "logistic": "logistic", "rf": "random_forest", "random_forest": "random_forest"}


def _out_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUTPUT_DIR_ENV, "rcl-output"))


def _parse_learner(text: str) -> LearnerCombo:
    try:
        reg, cls = text.lower().split("+")
        return LearnerCombo(RegressorSpec(_REG_ALIASES[reg]), ClassifierSpec(_CLS_ALIASES[cls]))
    except (ValueError, KeyError):
        raise argparse.ArgumentTypeError(f"bad learner combo {text!r}; use e.g. lasso+lr or rf+rf") from None


def _dgp_from_args(args) -> DgpConfig:
    return DgpConfig(N=args.n, p=args.p, r_c=args.rc, seed=args.seed, assignment=args.assignment,
                     param_seed=args.param_seed)


def _add_dgp_args(p, assignment="argmax"):
    p.add_argument("--n", type=int, default=10_000, help="number of rows")
    p.add_argument("--p", type=int, default=5, help="number of covariates")
    p.add_argument("--rc", type=float, default=1.0, help="confounding ratio in [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--assignment", choices=("argmax", "sample"), default=assignment)
    p.add_argument("--param-seed", type=int, default=None, help="freeze the DGP parameters to this seed")


def cmd_simulate(args) -> int:
    data, truth = generate(_dgp_from_args(args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(data, out)
    truth_path = Path(args.truth) if args.truth else out.with_suffix(".truth.csv")
    write_truth(truth.treatment_space.labels, truth.true_theta, truth_path)
    print(f"wrote {out} ({data.n_rows} rows) and {truth_path}")
    return 0


def _estimators(names, R) -> tuple[EstimatorSpec, ...]:
    return tuple(EstimatorSpec.parse(e, R=R) for e in names)


def _report(result) -> int:
    sys.stdout.write((result.output_dir / "report.txt").read_text())
    if result.n_failed:
        for c in result.cells:
            if c.error:
                print(f"cell failed: replication={c.replication} {c.combo} {c.estimator}: {c.error}", file=sys.stderr)
        return 1
    return 0


def cmd_estimate(args) -> int:
    for path in (args.data, args.truth):
        if path and not Path(path).is_file():
            raise FileNotFoundError(f"no such file: {path}")
    cfg = ExperimentConfig(
        csv_path=args.data,
        truth_path=args.truth,
        learners=tuple(args.learner or [_parse_learner("lasso+lr")]),
        estimators=_estimators(args.estimators, args.R),
        evaluation_split=args.evaluation_split,
        tuning="none" if args.no_tune else "per_replication",
        master_seed=args.seed,
    )
    return _report(run(cfg, _out_dir(args.out)))


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)
    if args.seed is not None:
        cfg = replace(cfg, master_seed=args.seed)
    return _report(run(cfg, args.out or cfg.output_dir or _out_dir(None)))


def cmd_verify(args) -> int:
    dgp = _dgp_from_args(args)
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    direction = PerturbationDirection()
    summaries = []
    for name in args.scores:
        kind = ScoreKind.parse(name)
        rep = fd_orthogonality(kind, dgp, direction, max_order=args.max_order, N=args.n, seed=args.seed,
                               level=args.level, strata=args.strata)
        (out / f"ortho_{kind.label}.csv").write_text(rep.to_csv())
        summaries.append(rep.summary())
    text = "".join(summaries)
    (out / "verify.txt").write_text(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcl", description="Multi-treatment ATE estimation with RCL and baselines.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a synthetic dataset and its truth sidecar")
    _add_dgp_args(p)
    p.add_argument("--out", required=True, help="CSV path for the observations")
    p.add_argument("--truth", help="truth sidecar path (default: <out>.truth.csv)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit nuisances and estimate ATEs on a CSV")
    p.add_argument("data", help="input CSV with columns y,d,z1,...")
    p.add_argument("--truth", help="level,theta_true sidecar; enables the error metrics")
    p.add_argument("--estimators", nargs="+", default=list(DEFAULT_ESTIMATORS))
    p.add_argument("--learner", type=_parse_learner, action="append", help="e.g. lasso+lr (repeatable)")
    p.add_argument("--R", type=int, default=100, help="random-picking rounds")
    p.add_argument("--evaluation-split", choices=("train", "test", "both"), default="test")
    p.add_argument("--no-tune", action="store_true", help="skip validation tuning of hyperparameters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV} or ./rcl-output)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("run", help="run a full experiment from a YAML config")
    p.add_argument("config")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=None, help="override master_seed")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("verify", help="finite-difference orthogonality reports")
    _add_dgp_args(p, assignment="sample")
    p.set_defaults(n=100_000)
    p.add_argument("--scores", nargs="+", default=["DR", "IPW", "DML", "RCL_2_1", "RCL_2_2"])
    p.add_argument("--max-order", type=int, default=2)
    p.add_argument("--level", type=int, default=0, help="treatment index (0-based)")
    p.add_argument("--strata", type=int, default=4, help="quantile bins for the conditional probe (1 = off)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
