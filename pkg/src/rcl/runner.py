"""Experiment orchestration: replications x learner combos x estimators.

Seeds: every random choice in replication ``m`` is driven by
``derive_seed(master_seed, m, cell, *extra)`` (a numpy ``SeedSequence``
over those integers), so any single cell can be recomputed in isolation.
Cells: 0 data generation, 1 split, 2 nuisance fitting (extra = combo
index), 3 random picking (extra = combo index, estimator index).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .data import DataError, ObservationSet, read_csv, read_truth, split
from .estimators import EstimatorSpec, ate_matrix, estimate_all_levels
from .learners import ClassifierSpec, RegressorSpec, fit_nuisances
from .metrics import MetricRow, MissingRowsError, aggregate, epsilon_ate_single, reduction_ratios
from .simulate import DgpConfig, generate

log = logging.getLogger(__name__)

CELL_DATA, CELL_SPLIT, CELL_FIT, CELL_PICK = 0, 1, 2, 3
OUTPUT_DIR_ENV = "RCL_OUTPUT_DIR"
DEFAULT_ESTIMATORS = ("DR", "IPW", "AIPW", "DML", "DML_TRIM", "RCL_2_1", "RCL_2_2")


class ConfigError(ValueError):
    pass


def derive_seed(master_seed: int, replication: int, cell: int, *extra: int) -> int:
    ints = [int(master_seed), int(replication), int(cell), *(int(e) for e in extra)]
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass(frozen=True)
class LearnerCombo:
    regressor: RegressorSpec
    classifier: ClassifierSpec

    @property
    def name(self) -> str:
        short = {"lasso": "LASSO", "ridge": "RIDGE", "random_forest": "RF", "logistic": "LR"}
        return f"{short[self.regressor.kind]}+{short[self.classifier.kind]}"


@dataclass
class ExperimentConfig:
    simulate: DgpConfig | None = None
    csv_path: str | None = None
    truth_path: str | None = None
    replications: int = 1
    split_ratios: tuple[float, float, float] = (0.56, 0.14, 0.30)
    learners: tuple[LearnerCombo, ...] = (LearnerCombo(RegressorSpec("lasso"), ClassifierSpec("logistic")),)
    estimators: tuple[EstimatorSpec, ...] = tuple(EstimatorSpec.parse(e) for e in DEFAULT_ESTIMATORS)
    evaluation_split: str = "test"
    tuning: str = "per_replication"
    master_seed: int = 0
    output_dir: str | None = None
    sweep_param: str | None = None
    sweep_values: tuple = ()
    emit_plot_data: bool = False
    record_timings: bool = False
    workers: int = 1

    def __post_init__(self):
        if (self.simulate is None) == (self.csv_path is None):
            raise ConfigError("exactly one data source is required: simulate or csv")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        if not self.learners or not self.estimators:
            raise ConfigError("learner grid and estimator list must be non-empty")
        if self.evaluation_split not in ("train", "test", "both"):
            raise ConfigError(f"evaluation_split must be train, test or both, got {self.evaluation_split!r}")
        if self.tuning not in ("per_replication", "global", "none"):
            raise ConfigError(f"tuning must be per_replication, global or none, got {self.tuning!r}")
        if self.sweep_param is not None:
            if self.simulate is None:
                raise ConfigError("sweeps need a simulated data source")
            if self.sweep_param not in ("N", "p", "r_c"):
                raise ConfigError(f"can only sweep N, p or r_c, got {self.sweep_param!r}")
            if not self.sweep_values:
                raise ConfigError("sweep needs at least one value")

    @property
    def eval_splits(self) -> tuple[str, ...]:
        return ("train", "test") if self.evaluation_split == "both" else (self.evaluation_split,)


# -- config file ---------------------------------------------------------------


def _learner_from(d: dict) -> LearnerCombo:
    reg = d.get("regressor", {})
    cls = d.get("classifier", {})
    if isinstance(reg, str):
        reg = {"kind": reg}
    if isinstance(cls, str):
        cls = {"kind": cls}
    return LearnerCombo(
        RegressorSpec(reg.get("kind", "lasso"), reg.get("hyperparameters", {}) or {}),
        ClassifierSpec(cls.get("kind", "logistic"), cls.get("hyperparameters", {}) or {}),
    )


def config_from_dict(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    raw = dict(raw or {})
    known = {
        "data", "replications", "split", "learners", "estimators", "rcl", "trim", "evaluation_split",
        "tuning", "master_seed", "output_dir", "sweep", "emit_plot_data", "record_timings", "workers",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data = raw.get("data") or {"simulate": {}}
    sim = csv_path = truth_path = None
    if "simulate" in data:
        s = dict(data["simulate"] or {})
        for key in ("doses", "noise_sds", "beta_range", "a_range"):
            if key in s:
                s[key] = tuple(s[key])
        try:
            sim = DgpConfig(**s)
        except TypeError as exc:
            raise ConfigError(f"bad simulate block: {exc}") from None
    if "csv" in data:
        c = data["csv"]
        if isinstance(c, str):
            c = {"path": c}
        base = base_dir or Path(".")
        csv_path = str(base / c["path"])
        truth_path = str(base / c["truth"]) if c.get("truth") else None
    rcl = raw.get("rcl") or {}
    trim = tuple(raw.get("trim", (0.01, 0.99)))
    estimators = []
    for e in raw.get("estimators", DEFAULT_ESTIMATORS):
        spec = EstimatorSpec.parse(str(e), R=int(rcl.get("R", 100)))
        if spec.kind == "DML_TRIM":
            spec = replace(spec, trim=trim)
        estimators.append(spec)
    learners = tuple(_learner_from(l) for l in raw.get("learners", [{"regressor": "lasso", "classifier": "logistic"}]))
    sweep = raw.get("sweep") or {}
    return ExperimentConfig(
        simulate=sim,
        csv_path=csv_path,
        truth_path=truth_path,
        replications=int(raw.get("replications", 1)),
        split_ratios=tuple(raw.get("split", (0.56, 0.14, 0.30))),
        learners=learners,
        estimators=tuple(estimators),
        evaluation_split=raw.get("evaluation_split", "test"),
        tuning=raw.get("tuning", "per_replication"),
        master_seed=int(raw.get("master_seed", 0)),
        output_dir=raw.get("output_dir"),
        sweep_param=sweep.get("param"),
        sweep_values=tuple(sweep.get("values", ())),
        emit_plot_data=bool(raw.get("emit_plot_data", False)),
        record_timings=bool(raw.get("record_timings", False)),
        workers=int(raw.get("workers", 1)),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(raw, base_dir=path.parent)


# -- one replication -------------------------------------------------------------


@dataclass
class CellResult:
    replication: int
    split: str
    combo: str
    estimator: str
    theta: tuple = ()
    eps: float = math.nan
    error: str | None = None
    seconds: float = 0.0
    sweep_value: Any = None


def _load_replication_data(cfg: ExperimentConfig, m: int, dgp: DgpConfig | None, cache: dict):
    """Returns (data, truth_or_None, truth_theta_or_None)."""
    if dgp is not None:
        data, truth = generate(replace(dgp, seed=derive_seed(cfg.master_seed, m, CELL_DATA)))
        return data, truth, None
    if "csv" not in cache:
        theta = None
        levels = None
        if cfg.truth_path:
            levels, theta = read_truth(cfg.truth_path)
        data = read_csv(cfg.csv_path, levels=levels).checked()
        cache["csv"] = (data, theta)
    data, theta = cache["csv"]
    return data, None, theta


def run_replication(cfg: ExperimentConfig, m: int, dgp: DgpConfig | None = None, tuned: dict | None = None,
                    cache: dict | None = None, sweep_value=None) -> tuple[list[CellResult], dict]:
    """Run every (combo, estimator, split) cell of replication ``m``.

    ``tuned`` maps combo index to already-chosen specs (global tuning);
    returns the cell results and the specs chosen here.
    """
    cache = {} if cache is None else cache
    results: list[CellResult] = []
    chosen: dict = {}
    try:
        data, truth, theta_fixed = _load_replication_data(cfg, m, dgp, cache)
        sp = split(data.n_rows, cfg.split_ratios, derive_seed(cfg.master_seed, m, CELL_SPLIT))
    except Exception as exc:  # noqa: BLE001 - recorded as failed cells
        for c in cfg.learners:
            for e in cfg.estimators:
                for s in cfg.eval_splits:
                    results.append(CellResult(m, s, c.name, e.label, error=f"{type(exc).__name__}: {exc}", sweep_value=sweep_value))
        return results, chosen
    for ci, combo in enumerate(cfg.learners):
        t0 = time.perf_counter()
        fit_seed = derive_seed(cfg.master_seed, m, CELL_FIT, ci)
        try:
            if tuned and ci in tuned:
                reg, cls = tuned[ci]
                fit = fit_nuisances(data, sp.train, reg, cls)
            else:
                reg = replace(combo.regressor, seed=fit_seed)
                cls = replace(combo.classifier, seed=fit_seed + 1)
                fit = fit_nuisances(data, sp.train, reg, cls, sp.validation, tune=cfg.tuning != "none")
            chosen[ci] = (fit.regressor_specs, fit.classifier_spec)
            fit_error = None
        except Exception as exc:  # noqa: BLE001
            fit, fit_error = None, f"{type(exc).__name__}: {exc}"
        fit_seconds = time.perf_counter() - t0
        for split_name in cfg.eval_splits:
            idx = sp.get(split_name)
            sub = data.subset(idx)
            if truth is not None:
                true_theta = truth.subset(idx).true_theta
            else:
                true_theta = theta_fixed
            for ei, espec in enumerate(cfg.estimators):
                cell = CellResult(m, split_name, combo.name, espec.label, sweep_value=sweep_value)
                if fit_error:
                    cell.error = fit_error
                    results.append(cell)
                    continue
                t1 = time.perf_counter()
                try:
                    spec = replace(espec, seed=derive_seed(cfg.master_seed, m, CELL_PICK, ci, ei))
                    est = estimate_all_levels(spec, fit, sub)
                    cell.theta = tuple(e.theta_hat for e in est)
                    if true_theta is not None:
                        truth_ate = np.subtract.outer(true_theta, true_theta)
                        cell.eps = epsilon_ate_single(ate_matrix(est, sub.treatment_space.labels), truth_ate)
                except Exception as exc:  # noqa: BLE001
                    cell.error = f"{type(exc).__name__}: {exc}"
                cell.seconds = time.perf_counter() - t1 + fit_seconds / max(1, len(cfg.estimators))
                results.append(cell)
    return results, chosen


def _run_one(args):
    cfg, m, dgp, tuned, sweep_value = args
    return run_replication(cfg, m, dgp, tuned, sweep_value=sweep_value)[0]


# -- aggregation and reports -------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def summarize(cells: list[CellResult]) -> list[tuple[Any, str, MetricRow]]:
    """Aggregate cells into one MetricRow per (sweep value, split, combo, estimator)."""
    groups: dict[tuple, list[CellResult]] = {}
    for c in cells:
        groups.setdefault((c.sweep_value, c.split, c.combo, c.estimator), []).append(c)
    out = []
    for (sv, sp, combo, est), cs in groups.items():
        ok = [c for c in cs if c.error is None]
        vals = [c.eps for c in ok]
        e, s, nbad = aggregate(vals) if vals else (math.nan, None, 0)
        ef, sf, _ = aggregate(vals, finite_only=True) if vals else (math.nan, None, 0)
        row = MetricRow(est, combo, e, s, ef, sf, nbad, len(cs) - len(ok), float(sum(c.seconds for c in cs)))
        out.append((sv, sp, row))
    return out


def _ratio_rows(summary):
    by_group: dict[tuple, dict[str, float]] = {}
    for sv, sp, row in summary:
        by_group.setdefault((sv, sp, row.combo), {})[row.estimator] = row.eps_ate
    out = []
    for (sv, sp, combo), eps in by_group.items():
        try:
            r_dr, r_dml = reduction_ratios(eps)
        except MissingRowsError:
            continue
        out.append((sv, sp, combo, r_dr, r_dml))
    return out


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def format_table(summary, ratios) -> str:
    """Aligned plain-text table of eps +- sigma per estimator."""
    lines = []
    header = ["split", "combo", "estimator", "eps_ATE", "sigma_ATE", "eps_ATE(finite)", "non-finite", "failed"]
    body = []
    for sv, sp, r in summary:
        body.append([
            (f"{sv}:" if sv is not None else "") + sp, r.combo, r.estimator, _short(r.eps_ate), _short(r.sigma_ate),
            _short(r.eps_ate_finite), str(r.n_nonfinite), str(r.n_failed),
        ])
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(header)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(v.ljust(w) for v, w in zip(b, widths)))
    if ratios:
        lines.append("")
        lines.append("reduction ratios (R_DR = RCL_2_2/DR - 1, R_DML = RCL_2_1/best DML-family - 1)")
        for sv, sp, combo, r_dr, r_dml in ratios:
            tag = (f"{sv}:" if sv is not None else "") + sp
            lines.append(f"  {tag:10s} {combo:12s} R_DR={_pct(r_dr)}  R_DML={_pct(r_dml)}")
    return "\n".join(lines) + "\n"


def _short(x) -> str:
    if x is None:
        return "-"
    if math.isinf(x):
        return "inf"
    if math.isnan(x):
        return "nan"
    return f"{x:.4f}"


def _pct(x) -> str:
    if math.isinf(x) or math.isnan(x):
        return _short(x)
    return f"{100 * x:+.1f}%"


@dataclass
class RunResult:
    cells: list[CellResult]
    summary: list
    ratios: list
    output_dir: Path | None = None

    @property
    def n_failed(self) -> int:
        return sum(1 for c in self.cells if c.error is not None)

    def eps_by(self, estimator: str, split_name: str = "test", combo: str | None = None, sweep_value=None) -> list[float]:
        return [c.eps for c in self.cells if c.estimator == estimator and c.split == split_name
                and (combo is None or c.combo == combo) and c.sweep_value == sweep_value and c.error is None]


def run(cfg: ExperimentConfig, output_dir=None, write: bool = True) -> RunResult:
    """Execute the full sweep; writes reports when ``write`` is true."""
    dgps: list[tuple[Any, DgpConfig | None]]
    if cfg.sweep_param is not None:
        dgps = [(v, replace(cfg.simulate, **{cfg.sweep_param: type(getattr(cfg.simulate, cfg.sweep_param))(v)}))
                for v in cfg.sweep_values]
    else:
        dgps = [(None, cfg.simulate)]
    cells: list[CellResult] = []
    for sv, dgp in dgps:
        tuned = None
        start = 0
        if cfg.tuning == "global":
            first, chosen = run_replication(cfg, 0, dgp, sweep_value=sv)
            cells.extend(first)
            tuned = chosen
            start = 1
        jobs = [(cfg, m, dgp, tuned, sv) for m in range(start, cfg.replications)]
        if cfg.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
                for res in pool.map(_run_one, jobs):
                    cells.extend(res)
        else:
            cache: dict = {}
            for job in jobs:
                cells.extend(run_replication(job[0], job[1], job[2], job[3], cache, job[4])[0])
        log.info("finished %s=%s", cfg.sweep_param, sv)
    summary = summarize(cells)
    ratios = _ratio_rows(summary)
    result = RunResult(cells, summary, ratios)
    if write:
        out = Path(output_dir or cfg.output_dir or os.environ.get(OUTPUT_DIR_ENV, "rcl-output"))
        write_reports(result, cfg, out)
        result.output_dir = out
    return result


def write_reports(result: RunResult, cfg: ExperimentConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    n_levels = max((len(c.theta) for c in result.cells), default=0)
    _write_csv(
        out / "replications.csv",
        ["sweep_value", "replication", "split", "combo", "estimator", "eps_ate", *(f"theta_{i + 1}" for i in range(n_levels)), "error"],
        [[c.sweep_value, c.replication, c.split, c.combo, c.estimator, c.eps,
          *(list(c.theta) + [None] * (n_levels - len(c.theta))), c.error] for c in result.cells],
    )
    _write_csv(
        out / "metrics.csv",
        ["sweep_value", "split", "combo", "estimator", "eps_ate", "sigma_ate", "eps_ate_finite", "sigma_ate_finite",
         "n_nonfinite", "n_failed"],
        [[sv, sp, r.combo, r.estimator, r.eps_ate, r.sigma_ate, r.eps_ate_finite, r.sigma_ate_finite,
          r.n_nonfinite, r.n_failed] for sv, sp, r in result.summary],
    )
    _write_csv(out / "ratios.csv", ["sweep_value", "split", "combo", "R_DR", "R_DML"], result.ratios)
    (out / "report.txt").write_text(format_table(result.summary, result.ratios))
    if cfg.emit_plot_data and cfg.sweep_param is not None:
        _write_csv(
            out / f"series_{cfg.sweep_param}.csv",
            [cfg.sweep_param, "split", "combo", "estimator", "eps_ate", "sigma_ate"],
            [[sv, sp, r.combo, r.estimator, r.eps_ate, r.sigma_ate] for sv, sp, r in result.summary],
        )
    if cfg.record_timings:
        _write_csv(out / "timings.csv", ["sweep_value", "split", "combo", "estimator", "seconds"],
                   [[sv, sp, r.combo, r.estimator, r.wall_time] for sv, sp, r in result.summary])
