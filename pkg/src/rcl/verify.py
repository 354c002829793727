"""Numerical checks of the moment and orthogonality conditions of the scores.

Everything is evaluated on simulated data where the true nuisances are
known. Derivatives with respect to the nuisances are directional:
``g -> g + t*h_g(z)`` and ``pi -> pi + s*h_pi(z)``. Mixed derivatives
d^a1/dt^a1 d^a2/ds^a2 of the sample mean of psi are estimated row by row
with tensor-product central differences on one common sample, combined by
Richardson extrapolation over the step grid; the row-wise estimates give a
Monte-Carlo standard error.

The RCL moment terms (and so the coefficients b) stay fixed at their
true-propensity values while pi is perturbed.

By default the checks use ``assignment="sample"``: the conditional-mean
identities behind orthogonality need E[1{D=d_i} | Z] = pi_i(Z), which the
deterministic argmax rule does not satisfy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .estimators import EstimatorSpec, estimate_all_levels, level_seed, rcl_from_arrays
from .scores import ScoreKind, rcl_coefficients, residual_moments, score_value
from .simulate import DgpConfig, generate

DEFAULT_STEPS = (10**-1, 10**-1.5, 10**-2)
TOL_FLOOR = 5e-3


class VerificationError(ValueError):
    pass


def _one(z):
    return np.ones(z.shape[0])


@dataclass(frozen=True)
class PerturbationDirection:
    g_direction: Callable = _one
    pi_direction: Callable = _one
    steps: tuple[float, ...] = DEFAULT_STEPS

    def __post_init__(self):
        if len(self.steps) < 3:
            raise VerificationError("need at least 3 step sizes for Richardson extrapolation")


@dataclass
class OrthoRow:
    alpha: tuple[int, int]
    estimate: float
    se: float
    tol: float
    passed: bool
    stratum: str = "all"


@dataclass
class OrthoReport:
    score: str
    level: str
    N: int
    seed: int
    rows: list[OrthoRow] = field(default_factory=list)

    def row(self, alpha, stratum="all") -> OrthoRow:
        for r in self.rows:
            if r.alpha == tuple(alpha) and r.stratum == stratum:
                return r
        raise KeyError(alpha)

    def passes(self, max_order: int) -> bool:
        """All unconditional derivatives with 1 <= |alpha| <= max_order vanish."""
        return all(r.passed for r in self.rows if r.stratum == "all" and 1 <= sum(r.alpha) <= max_order)

    def to_csv(self) -> str:
        lines = ["score,level,alpha_g,alpha_pi,order,stratum,estimate,se,tol,passed"]
        for r in self.rows:
            lines.append(
                f"{self.score},{self.level},{r.alpha[0]},{r.alpha[1]},{sum(r.alpha)},{r.stratum},"
                f"{r.estimate!r},{r.se!r},{r.tol!r},{int(r.passed)}"
            )
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [f"orthogonality check: score={self.score} level={self.level} N={self.N} seed={self.seed}"]
        for r in self.rows:
            if r.stratum != "all":
                continue
            verdict = "PASS" if r.passed else "FAIL"
            lines.append(
                f"  alpha={r.alpha} |alpha|={sum(r.alpha)}  estimate={r.estimate:+.6f}  se={r.se:.2e}  tol={r.tol:.2e}  {verdict}"
            )
        return "\n".join(lines) + "\n"


# -- finite-difference machinery ---------------------------------------------


def central_weights(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the second-order central stencil for a derivative."""
    if order == 0:
        return np.array([0]), np.array([1.0])
    half = (order + 1) // 2
    offsets = np.arange(-half, half + 1)
    V = np.vander(offsets.astype(float), increasing=True).T
    rhs = np.zeros(len(offsets))
    rhs[order] = math.factorial(order)
    return offsets, np.linalg.solve(V, rhs)


def richardson_weights(steps: Sequence[float]) -> np.ndarray:
    """Weights c with sum_k c_k D(h_k) = D(0) when D(h) is even in h."""
    h2 = np.asarray(steps, dtype=float) ** 2
    V = np.vander(h2, increasing=True).T
    rhs = np.zeros(len(h2))
    rhs[0] = 1.0
    return np.linalg.solve(V, rhs)


@dataclass
class _Sample:
    theta: float
    y: np.ndarray
    ind: np.ndarray
    g: np.ndarray
    pi: np.ndarray
    z: np.ndarray
    level: str


def _draw(dgp: DgpConfig, N: int, seed: int, level: int, kind: ScoreKind) -> tuple[_Sample, object, object]:
    data, truth = generate(replace(dgp, N=N, seed=seed))
    pi_all = truth.true_propensities
    if np.all((pi_all[:, level] <= 0) | (pi_all[:, level] >= 1)):
        raise VerificationError("degenerate design: the propensity of this level is identically 0 or 1")
    ind = (truth.assigned == level).astype(float)
    # the RCL score is written in the potential outcome of the target level
    y = truth.potential_outcomes[:, level] if kind.name == "RCL" else data.outcomes
    s = _Sample(float(truth.true_theta[level]), y, ind, truth.surface_values[:, level], pi_all[:, level],
                data.covariates, truth.treatment_space.labels[level])
    coeffs = moments = None
    if kind.name == "RCL":
        moments = residual_moments(ind, s.pi, kind.r, kind.k, level=s.level)
        coeffs = rcl_coefficients(moments, kind.r, kind.k)
    return s, coeffs, moments


def mc_moment_check(kind: ScoreKind, dgp: DgpConfig, N: int = 100_000, seed: int = 0, level: int = 0) -> tuple[float, float]:
    """Sample mean and standard error of psi at the true parameters."""
    if N < 1000:
        raise VerificationError("use at least 1000 draws for a moment check")
    s, coeffs, moments = _draw(dgp, N, seed, level, kind)
    psi = score_value(kind, s.theta, s.y, s.ind, s.g, s.pi, coeffs, moments)
    return float(np.mean(psi)), float(np.std(psi, ddof=1) / math.sqrt(N))


def _rowwise_derivative(kind, s: _Sample, hg, hp, alpha, steps, coeffs, moments) -> np.ndarray:
    a_g, a_p = alpha
    og, wg = central_weights(a_g)
    op, wp = central_weights(a_p)
    cache: dict = {}
    per_step = []
    for h in steps:
        acc = np.zeros(len(s.y))
        for jg, wgt_g in zip(og, wg):
            for jp, wgt_p in zip(op, wp):
                w = wgt_g * wgt_p
                if w == 0.0:
                    continue
                key = (jg * h, jp * h)
                if key not in cache:
                    pert_pi = s.pi + key[1] * hp
                    if np.any(pert_pi <= 0) or np.any(pert_pi >= 1):
                        raise VerificationError(
                            f"perturbed propensity leaves (0, 1) at step {h:g}; use smaller steps"
                        )
                    cache[key] = score_value(kind, s.theta, s.y, s.ind, s.g + key[0] * hg, pert_pi, coeffs, moments)
                acc += w * cache[key]
        per_step.append(acc / h ** (a_g + a_p))
    if a_g + a_p == 0:
        return per_step[0]
    c = richardson_weights(steps)
    return sum(ck * d for ck, d in zip(c, per_step))


def multi_indices(max_order: int) -> list[tuple[int, int]]:
    return [(a, n - a) for n in range(max_order + 1) for a in range(n, -1, -1)]


def fd_orthogonality(
    kind: ScoreKind,
    dgp: DgpConfig,
    direction: PerturbationDirection | None = None,
    max_order: int = 2,
    N: int = 100_000,
    seed: int = 0,
    level: int = 0,
    strata: int = 4,
) -> OrthoReport:
    """Finite-difference Gateaux derivatives of E[psi] for all |alpha| <= max_order.

    A row passes when ``|estimate| <= max(5e-3, 3 * SE)``. With ``strata``
    > 1 the same estimates are also reported within quantile bins of the
    covariate sum, as a partial probe of the conditional statement.
    """
    direction = direction or PerturbationDirection()
    s, coeffs, moments = _draw(dgp, N, seed, level, kind)
    hg = np.asarray(direction.g_direction(s.z), dtype=float)
    hp = np.asarray(direction.pi_direction(s.z), dtype=float)
    if np.abs(hg).max() > 1 + 1e-12 or np.abs(hp).max() > 1 + 1e-12:
        raise VerificationError("perturbation directions must be bounded by 1 on the sample")
    report = OrthoReport(kind.label, s.level, N, seed)
    bins = None
    if strata > 1:
        proj = s.z.sum(axis=1)
        edges = np.quantile(proj, np.linspace(0, 1, strata + 1)[1:-1])
        bins = np.searchsorted(edges, proj, side="right")
    for alpha in multi_indices(max_order):
        d = _rowwise_derivative(kind, s, hg, hp, alpha, direction.steps, coeffs, moments)
        report.rows.append(_row(alpha, d, "all"))
        if bins is not None:
            for b in range(strata):
                report.rows.append(_row(alpha, d[bins == b], f"bin{b + 1}"))
    return report


def _row(alpha, d, stratum) -> OrthoRow:
    est = float(np.mean(d))
    se = float(np.std(d, ddof=1) / math.sqrt(len(d))) if len(d) > 1 else math.inf
    tol = max(TOL_FLOOR, 3 * se)
    return OrthoRow(tuple(alpha), est, se, tol, abs(est) <= tol, stratum)


@dataclass
class SweepRow:
    N: int
    median_error: float
    iqr: float
    median_kappa_gap: float | None


def consistency_sweep(spec: EstimatorSpec, dgp: DgpConfig, N_grid: Sequence[int], seeds: Sequence[int]) -> list[SweepRow]:
    """Error of an estimator with exact nuisances as N grows.

    The error of one run is the mean over levels of |theta_hat - theta|. For
    RCL the gap between the random-picking term and its infeasible
    counterfactual version (true counterfactual residuals of untreated
    rows) is reported too.
    """
    if list(N_grid) != sorted(N_grid):
        raise VerificationError("N_grid must be increasing")
    rows = []
    for N in N_grid:
        errs, gaps = [], []
        for seed in seeds:
            data, truth = generate(replace(dgp, N=int(N), seed=int(seed)))
            fit = truth.oracle_nuisance()
            s = replace(spec, seed=int(seed))
            est = estimate_all_levels(s, fit, data)
            theta = np.array([e.theta_hat for e in est])
            errs.append(float(np.mean(np.abs(theta - truth.true_theta))))
            if spec.kind == "RCL":
                gaps.append(_kappa_gap(spec, data, truth, s.seed))
        q1, q3 = np.percentile(errs, [25, 75])
        rows.append(SweepRow(int(N), float(np.median(errs)), float(q3 - q1), float(np.median(gaps)) if gaps else None))
    return rows


def _kappa_gap(spec: EstimatorSpec, data, truth, seed) -> float:
    gaps = []
    for i in range(truth.treatment_space.n):
        ind = (truth.assigned == i).astype(float)
        g = truth.surface_values[:, i]
        pi = truth.true_propensities[:, i]
        _, parts, det = rcl_from_arrays(data.outcomes, ind, g, pi, spec.r, spec.k, spec.R,
                                        level_seed(seed, i), return_detail=True)
        untreated = ind == 0
        xi_cf = truth.potential_outcomes[untreated, i] - g[untreated]
        kappa_cf = float((xi_cf * det["A"][untreated]).sum() / len(ind))
        gaps.append(abs(parts[2] - kappa_cf))
    return float(np.mean(gaps))
