"""Point estimators of per-level mean potential outcomes and their ATE matrix.

Each estimator has an array-level form (``*_from_arrays``) working on the
outcome, treatment indicator and nuisance predictions for one level, and a
wrapper taking a fitted nuisance bundle plus an :class:`ObservationSet`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import DataError, ObservationSet, relabel
from .scores import RclCoefficients, ResidualMoments, rcl_coefficients, residual_moments, weight_A

ESTIMATOR_KINDS = ("DR", "IPW", "AIPW", "DML", "DML_TRIM", "RCL")
SMALL_TREATED_SET = 30
# elements drawn per block in the random-picking loop
_PICK_BLOCK = 1 << 20


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    trim: tuple[float, float] = (0.01, 0.99)
    r: int = 2
    k: int = 1
    R: int = 100
    seed: int = 0

    def __post_init__(self):
        kind = self.kind.upper().replace("-", "_")
        if kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator {self.kind!r}; choose from {ESTIMATOR_KINDS}")
        object.__setattr__(self, "kind", kind)
        low, high = (float(v) for v in self.trim)
        if not 0.0 <= low < high <= 1.0:
            raise ValueError(f"trim cutoffs must satisfy 0 <= low < high <= 1, got {self.trim}")
        object.__setattr__(self, "trim", (low, high))
        if self.R < 1:
            raise ValueError("R must be >= 1")
        if self.r < 1 or self.k < 1:
            raise ValueError("RCL needs r >= 1 and k >= 1")

    @property
    def label(self) -> str:
        return f"RCL_{self.r}_{self.k}" if self.kind == "RCL" else self.kind

    @classmethod
    def parse(cls, text: str, R: int = 100, seed: int = 0) -> "EstimatorSpec":
        """``DR``, ``DML-trim``, ``RCL_2_2``, ``RCL(2,1)`` ..."""
        t = text.strip().upper().replace("-", "_").replace(" ", "")
        if t.startswith("RCL"):
            rest = t[3:].strip("(_)").replace(")", "")
            parts = [p for p in rest.replace(",", "_").split("_") if p]
            if len(parts) == 1 and len(parts[0]) == 2:
                parts = list(parts[0])
            r, k = (int(parts[0]), int(parts[1])) if parts else (2, 1)
            return cls("RCL", r=r, k=k, R=R, seed=seed)
        return cls(t)


@dataclass(frozen=True)
class LevelEstimate:
    level: str
    theta_hat: float
    components: tuple[float, float, float] | None = None
    extras: dict = field(default_factory=dict, compare=False, repr=False)


@dataclass(frozen=True)
class AteMatrix:
    levels: tuple[str, ...]
    values: np.ndarray

    def __getitem__(self, ij):
        return self.values[ij]


def _arrays(y, indicator, g=None, pi=None):
    y = np.asarray(y, dtype=float).ravel()
    ind = np.asarray(indicator, dtype=float).ravel()
    out = [y, ind]
    for v in (g, pi):
        if v is not None:
            v = np.asarray(v, dtype=float).ravel()
            if len(v) != len(y):
                raise EstimationError("nuisance predictions are not aligned with the data")
            out.append(v)
    if len(ind) != len(y):
        raise EstimationError("indicator is not aligned with the outcomes")
    return out


def dr_from_arrays(g) -> float:
    return float(np.mean(np.asarray(g, dtype=float)))


def ipw_from_arrays(y, indicator, pi) -> float:
    y, ind, pi = _arrays(y, indicator, pi=pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ind != 0, y * ind / pi, 0.0)
    return float(terms.sum() / len(y))


def dml_from_arrays(y, indicator, g, pi, trim: tuple[float, float] | None = None) -> float:
    y, ind, g, pi = _arrays(y, indicator, g, pi)
    if trim is not None:
        pi = np.clip(pi, trim[0], trim[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        correction = np.where(ind != 0, ind * (y - g) / pi, 0.0)
    return float(g.mean() + correction.sum() / len(y))


def aipw_from_arrays(y, indicator, g, pi) -> float:
    """Augmented IPW written as  mean[ y 1/pi - (1 - pi) g / pi ]  per unit.

    For untreated rows the per-unit term reduces to ``g`` (the indicator is
    folded in before dividing), which keeps the identity with DML exact.
    """
    y, ind, g, pi = _arrays(y, indicator, g, pi)
    with np.errstate(divide="ignore", invalid="ignore"):
        treated = y * ind / pi - (ind - pi) * g / pi
    terms = np.where(ind != 0, treated, g)
    return float(terms.sum() / len(y))


def rcl_from_arrays(y, indicator, g, pi, r=2, k=1, R=100, seed=0, level=None, moments=None, return_detail=False):
    """RCL estimate for one level; returns ``(theta, (a, b, c))``.

    ``(a)`` is the DR term, ``(b)`` the weighted factual residuals of treated
    rows, ``(c)`` the random-picking substitute for untreated rows: each of
    ``R`` rounds draws one treated residual uniformly with replacement for
    every untreated row. Moments are computed on this same sample unless
    ``moments`` is given.
    """
    y, ind, g, pi = _arrays(y, indicator, g, pi)
    N = len(y)
    treated = ind != 0
    n_treated = int(treated.sum())
    if n_treated == 0:
        raise EstimationError(f"no treated units at level {level!r}")
    if n_treated < SMALL_TREATED_SET and n_treated < N:
        warnings.warn(f"only {n_treated} treated units at level {level!r}; random picking is coarse", stacklevel=2)
    if moments is None:
        moments = residual_moments(ind, pi, r, k, level=level)
    coeffs = rcl_coefficients(moments, r, k)
    A = weight_A(ind, pi, coeffs, moments)
    resid = y - g
    part_a = float(g.mean())
    part_b = float((resid[treated] * A[treated]).sum() / N)
    pool = resid[treated]
    A_c = A[~treated]
    part_c = picking_term(pool, A_c, N, R, seed)
    theta = part_a + part_b + part_c
    if return_detail:
        return theta, (part_a, part_b, part_c), {"moments": moments, "coeffs": coeffs, "A": A}
    return theta, (part_a, part_b, part_c)


def picking_term(pool, weights, N: int, R: int, seed) -> float:
    """(1/R) sum_u (1/N) sum_m pool[pick_{m,u}] * weights[m], picks uniform with replacement.

    Draws come from one seeded generator in fixed-size blocks of rounds, so
    the result is reproducible for a given seed.
    """
    pool = np.asarray(pool, dtype=float)
    weights = np.asarray(weights, dtype=float)
    n_c = len(weights)
    if n_c == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    rounds_per_block = max(1, _PICK_BLOCK // n_c)
    total = 0.0
    done = 0
    while done < R:
        b = min(rounds_per_block, R - done)
        picks = rng.integers(0, len(pool), size=(b, n_c))
        total += float((pool[picks] @ weights).sum())
        done += b
    return total / (R * N)


# -- wrappers on fitted nuisances -------------------------------------------


def _level_inputs(fit, data: ObservationSet, level):
    space = data.treatment_space
    i = space.index(level)
    if fit.treatment_space.labels != space.labels:
        raise EstimationError("nuisance fit and data use different treatment spaces")
    ind = relabel(data, level).indicator
    G = fit.g_hat(data.covariates)
    P = fit.pi_hat(data.covariates)
    return data.outcomes, ind, G[:, i], P[:, i]


def estimate_dr(fit, data: ObservationSet, level) -> LevelEstimate:
    _, _, g, _ = _level_inputs(fit, data, level)
    return LevelEstimate(str(level), dr_from_arrays(g))


def estimate_ipw(fit, data: ObservationSet, level) -> LevelEstimate:
    y, ind, _, pi = _level_inputs(fit, data, level)
    return LevelEstimate(str(level), ipw_from_arrays(y, ind, pi))


def estimate_dml(fit, data: ObservationSet, level, trim=None) -> LevelEstimate:
    y, ind, g, pi = _level_inputs(fit, data, level)
    return LevelEstimate(str(level), dml_from_arrays(y, ind, g, pi, trim))


def estimate_aipw(fit, data: ObservationSet, level) -> LevelEstimate:
    y, ind, g, pi = _level_inputs(fit, data, level)
    return LevelEstimate(str(level), aipw_from_arrays(y, ind, g, pi))


def estimate_rcl(fit, data: ObservationSet, level, r=2, k=1, R=100, seed=0) -> LevelEstimate:
    y, ind, g, pi = _level_inputs(fit, data, level)
    theta, parts, detail = rcl_from_arrays(y, ind, g, pi, r, k, R, seed, level=str(level), return_detail=True)
    return LevelEstimate(str(level), theta, parts, {"moments": detail["moments"], "coeffs": detail["coeffs"]})


def level_seed(seed: int, level_index: int) -> int:
    """Derived seed for the random picking at one treatment level."""
    return int(np.random.SeedSequence([int(seed), 0x52434C, int(level_index)]).generate_state(1)[0])


def estimate_all_levels(spec: EstimatorSpec, fit, data: ObservationSet) -> list[LevelEstimate]:
    """Run one estimator at every level, sharing the nuisance predictions."""
    space = data.treatment_space
    G = fit.g_hat(data.covariates)
    P = fit.pi_hat(data.covariates)
    y = data.outcomes
    out = []
    for i, level in enumerate(space.labels):
        ind = relabel(data, level).indicator
        g, pi = G[:, i], P[:, i]
        if spec.kind == "DR":
            out.append(LevelEstimate(level, dr_from_arrays(g)))
        elif spec.kind == "IPW":
            out.append(LevelEstimate(level, ipw_from_arrays(y, ind, pi)))
        elif spec.kind == "DML":
            out.append(LevelEstimate(level, dml_from_arrays(y, ind, g, pi)))
        elif spec.kind == "DML_TRIM":
            out.append(LevelEstimate(level, dml_from_arrays(y, ind, g, pi, spec.trim)))
        elif spec.kind == "AIPW":
            out.append(LevelEstimate(level, aipw_from_arrays(y, ind, g, pi)))
        else:
            theta, parts = rcl_from_arrays(y, ind, g, pi, spec.r, spec.k, spec.R, level_seed(spec.seed, i), level)
            out.append(LevelEstimate(level, theta, parts))
    return out


def ate_matrix(estimates: Sequence[LevelEstimate], levels: Sequence[str] | None = None) -> AteMatrix:
    """theta^{i,j} = theta^i - theta^j with an exact zero diagonal."""
    by_level = {e.level: e.theta_hat for e in estimates}
    levels = tuple(by_level) if levels is None else tuple(str(l) for l in levels)
    missing = [l for l in levels if l not in by_level]
    if missing:
        raise EstimationError(f"missing estimates for level(s) {missing}")
    theta = np.array([by_level[l] for l in levels], dtype=float)
    with np.errstate(invalid="ignore"):
        values = theta[:, None] - theta[None, :]
    np.fill_diagonal(values, 0.0)
    return AteMatrix(levels, values)
