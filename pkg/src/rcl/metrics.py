"""Evaluation metrics: weighted relative ATE error, its aggregates, reduction ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .estimators import AteMatrix

DML_FAMILY = ("IPW", "AIPW", "DML", "DML_TRIM")


def _values(m) -> np.ndarray:
    return np.asarray(m.values if isinstance(m, AteMatrix) else m, dtype=float)


def epsilon_ate_single(est, truth) -> float:
    """sum_{i != j} |est_ij - truth_ij| / sum_{i != j} |truth_ij| over ordered pairs."""
    E, T = _values(est), _values(truth)
    if E.shape != T.shape or E.ndim != 2 or E.shape[0] != E.shape[1] or E.shape[0] < 2:
        raise ValueError(f"need two n x n matrices with n >= 2, got {E.shape} and {T.shape}")
    off = ~np.eye(E.shape[0], dtype=bool)
    denom = np.abs(T[off]).sum()
    if denom == 0:
        raise ValueError("true ATE matrix is all zero; the relative error is undefined")
    with np.errstate(invalid="ignore"):
        num = np.abs(E[off] - T[off]).sum()
    return float(num / denom)


def aggregate(values: Iterable[float], finite_only: bool = False) -> tuple[float, float | None, int]:
    """Mean and Bessel-corrected SD across replications.

    Returns ``(eps, sigma, n_nonfinite)``; ``sigma`` is None with fewer than
    two usable values. Without ``finite_only`` any non-finite value makes
    both statistics non-finite.
    """
    v = np.asarray(list(values), dtype=float)
    bad = ~np.isfinite(v)
    n_bad = int(bad.sum())
    if finite_only:
        v = v[~bad]
    if len(v) == 0:
        return math.nan, None, n_bad
    if not finite_only and n_bad:
        # any +inf gives inf; a NaN anywhere poisons the mean
        eps = math.nan if np.isnan(v).any() else math.inf
        return eps, (eps if len(v) > 1 else None), n_bad
    eps = float(v.mean())
    sigma = float(v.std(ddof=1)) if len(v) > 1 else None
    return eps, sigma, n_bad


@dataclass
class MetricRow:
    estimator: str
    combo: str
    eps_ate: float
    sigma_ate: float | None
    eps_ate_finite: float
    sigma_ate_finite: float | None
    n_nonfinite: int
    n_failed: int = 0
    wall_time: float = 0.0


class MissingRowsError(ValueError):
    pass


def reduction_ratios(rows: Mapping[str, float] | Sequence[MetricRow]) -> tuple[float, float]:
    """(R_DR, R_DML) from per-estimator eps values.

    R_DR = eps(RCL_2_2) / eps(DR) - 1 and
    R_DML = eps(RCL_2_1) / min(eps over IPW, AIPW, DML, DML_TRIM) - 1, where an
    infinite competitor counts as +inf (so a finite RCL gives -100%).
    """
    eps = rows if isinstance(rows, Mapping) else {r.estimator: r.eps_ate for r in rows}
    missing = [k for k in ("RCL_2_2", "DR", "RCL_2_1") if k not in eps]
    family = [eps[k] for k in DML_FAMILY if k in eps]
    if not family:
        missing.append("one of " + "/".join(DML_FAMILY))
    if missing:
        raise MissingRowsError(f"reduction ratios need rows for: {', '.join(missing)}")
    r_dr = _ratio(eps["RCL_2_2"], eps["DR"])
    competitor = min((math.inf if (math.isnan(e) or math.isinf(e)) else e) for e in family)
    r_dml = _ratio(eps["RCL_2_1"], competitor)
    return r_dr, r_dml


def _ratio(a: float, b: float) -> float:
    if math.isinf(b) and math.isfinite(a):
        return -1.0
    if b == 0:
        return 0.0 if a == 0 else math.inf
    return a / b - 1.0
