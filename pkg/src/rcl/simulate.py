"""Synthetic multi-treatment data with known ground truth.

Covariates are standard Gaussian. Propensities are a softmax of a linear
index in the first floor(p * r_c) covariates. Potential outcomes are
``exp(sqrt(d_i)) * (a_i' z + 1)**2 + noise_i``. By default each row gets
the treatment with the highest propensity (ties to the lowest index);
``assignment="sample"`` draws the treatment from the propensities instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import ObservationSet, TreatmentSpace
from .learners import FixedNuisance


@dataclass(frozen=True)
class DgpConfig:
    N: int = 10_000
    p: int = 5
    r_c: float = 1.0
    doses: tuple[float, ...] = (0.1, 0.5, 1.0)
    noise_sds: tuple[float, ...] = (3.0, 2.0, 1.0)
    beta_range: tuple[float, float] = (-0.1, 0.1)
    a_range: tuple[float, float] = (0.1, 0.5)
    seed: int = 0
    assignment: str = "argmax"
    # when set, beta and a are drawn from this seed and stay fixed across replications
    param_seed: int | None = None

    def __post_init__(self):
        if self.N < 1 or self.p < 1:
            raise ValueError("N and p must be positive")
        if not 0.0 <= self.r_c <= 1.0:
            raise ValueError(f"confounding ratio must lie in [0, 1], got {self.r_c}")
        if len(self.doses) < 2 or any(d <= 0 for d in self.doses):
            raise ValueError("need at least two positive doses")
        if len(self.noise_sds) != len(self.doses) or any(s <= 0 for s in self.noise_sds):
            raise ValueError("noise_sds must be positive and align with doses")
        if self.assignment not in ("argmax", "sample"):
            raise ValueError(f"assignment must be 'argmax' or 'sample', got {self.assignment!r}")

    @property
    def n_confounders(self) -> int:
        return int(math.floor(self.p * self.r_c + 1e-12))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(f"d{i + 1}" for i in range(len(self.doses)))


@dataclass(frozen=True)
class GroundTruth:
    """Everything the simulator knows; estimators must never receive this."""

    treatment_space: TreatmentSpace
    true_theta: np.ndarray
    true_propensities: np.ndarray = field(repr=False)
    potential_outcomes: np.ndarray = field(repr=False)
    surface_values: np.ndarray = field(repr=False)
    assigned: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    doses: tuple[float, ...] = ()

    def true_outcome_fn(self, Z) -> np.ndarray:
        """Noise-free outcome surface g_i(z) for every level (N x n)."""
        return outcome_surface(np.asarray(Z, dtype=float), self.a, self.doses)

    def propensity_fn(self, Z) -> np.ndarray:
        return propensity_matrix(np.asarray(Z, dtype=float), self.beta)

    @property
    def true_ate(self) -> np.ndarray:
        return self.true_theta[:, None] - self.true_theta[None, :]

    def oracle_nuisance(self) -> FixedNuisance:
        return FixedNuisance(self.treatment_space, self.surface_values, self.true_propensities)

    def subset(self, index) -> "GroundTruth":
        """Restrict to rows ``index``; theta is recomputed on those rows."""
        index = np.asarray(index, dtype=int)
        sv = self.surface_values[index]
        return GroundTruth(
            self.treatment_space, sv.mean(axis=0), self.true_propensities[index],
            self.potential_outcomes[index], sv, self.assigned[index], self.beta, self.a, self.doses,
        )


def propensity_matrix(Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    q = beta.shape[1]
    logits = Z[:, :q] @ beta.T if q else np.zeros((Z.shape[0], beta.shape[0]))
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def outcome_surface(Z: np.ndarray, a: np.ndarray, doses) -> np.ndarray:
    scale = np.exp(np.sqrt(np.asarray(doses, dtype=float)))
    return scale[None, :] * (Z @ a.T + 1.0) ** 2


def generate(config: DgpConfig) -> tuple[ObservationSet, GroundTruth]:
    """Draw one dataset; bit-identical for a fixed config."""
    n_levels = len(config.doses)
    rng = np.random.default_rng(config.seed)
    prng = rng if config.param_seed is None else np.random.default_rng(config.param_seed)
    q = config.n_confounders
    beta = prng.uniform(config.beta_range[0], config.beta_range[1], size=(n_levels, q))
    a = prng.uniform(config.a_range[0], config.a_range[1], size=(n_levels, config.p))
    Z = rng.standard_normal((config.N, config.p))
    noise = rng.standard_normal((config.N, n_levels)) * np.asarray(config.noise_sds)[None, :]
    pi = propensity_matrix(Z, beta)
    if config.assignment == "argmax":
        assigned = np.argmax(pi, axis=1)
    else:
        u = rng.random(config.N)
        assigned = np.minimum((pi.cumsum(axis=1) < u[:, None]).sum(axis=1), n_levels - 1)
    surface = outcome_surface(Z, a, config.doses)
    potential = surface + noise
    y = potential[np.arange(config.N), assigned]
    space = TreatmentSpace(config.labels, tuple(config.doses))
    labels = np.array(space.labels)[assigned]
    data = ObservationSet(y, labels, Z, space)
    truth = GroundTruth(
        treatment_space=space,
        true_theta=surface.mean(axis=0),
        true_propensities=pi,
        potential_outcomes=potential,
        surface_values=surface,
        assigned=assigned,
        beta=beta,
        a=a,
        doses=tuple(config.doses),
    )
    return data, truth


def corrupt_nuisances(truth: GroundTruth, mode: str, value: float = 0.0, fraction: float = 0.0, seed: int = 0) -> FixedNuisance:
    """True nuisances with one deliberate defect.

    ``bias_g``: add ``value`` to every outcome surface.
    ``mix_pi``: shrink propensities toward uniform, ``(1 - value) pi + value / n``.
    ``clip_pi``: for a random ``fraction`` of rows set the propensity of the
    assigned level to ``value`` and rescale the other levels to keep the simplex.
    """
    g = truth.surface_values.copy()
    pi = truth.true_propensities.copy()
    n_rows, n_levels = pi.shape
    if mode == "bias_g":
        g = g + float(value)
    elif mode == "mix_pi":
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"mixing weight must lie in [0, 1], got {value}")
        pi = (1.0 - value) * pi + value / n_levels
    elif mode == "clip_pi":
        if not 0.0 < value < 0.5:
            raise ValueError(f"clip value must lie in (0, 0.5), got {value}")
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
        rng = np.random.default_rng(seed)
        rows = rng.choice(n_rows, size=int(round(fraction * n_rows)), replace=False)
        cols = truth.assigned[rows]
        others = pi[rows].copy()
        others[np.arange(len(rows)), cols] = 0.0
        others *= (1.0 - value) / others.sum(axis=1, keepdims=True)
        others[np.arange(len(rows)), cols] = value
        pi[rows] = others
    else:
        raise ValueError(f"unknown corruption mode {mode!r}")
    return FixedNuisance(truth.treatment_space, g, pi)
