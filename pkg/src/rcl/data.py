"""Observational data containers, validation, relabeling and splitting."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DataError(ValueError):
    """Raised for malformed datasets, unknown treatment levels or bad split requests."""


def _natural_key(token: str):
    parts = re.split(r"(\d+(?:\.\d+)?)", token)
    return [(0, float(p), "") if re.fullmatch(r"\d+(?:\.\d+)?", p) else (1, 0.0, p) for p in parts]


@dataclass(frozen=True)
class TreatmentSpace:
    """Ordered set of treatment labels, optionally with numeric doses.

    Estimators only ever use the labels; doses exist for the simulator.
    """

    labels: tuple[str, ...]
    doses: tuple[float, ...] | None = None

    def __post_init__(self):
        labels = tuple(str(lab) for lab in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) < 2:
            raise DataError("a treatment space needs at least 2 levels")
        if len(set(labels)) != len(labels):
            raise DataError(f"treatment labels must be distinct, got {labels}")
        if self.doses is not None:
            doses = tuple(float(d) for d in self.doses)
            if len(doses) != len(labels):
                raise DataError("doses must align with labels")
            object.__setattr__(self, "doses", doses)

    @property
    def n(self) -> int:
        return len(self.labels)

    def index(self, level: str) -> int:
        try:
            return self.labels.index(str(level))
        except ValueError:
            raise DataError(f"unknown treatment level {level!r}; space is {self.labels}") from None

    def __contains__(self, level) -> bool:
        return str(level) in self.labels

    @classmethod
    def from_observed(cls, tokens: Sequence[str]) -> "TreatmentSpace":
        """Build a space from the distinct observed tokens in natural sort order."""
        return cls(tuple(sorted({str(t) for t in tokens}, key=_natural_key)))


@dataclass(frozen=True)
class ObservationSet:
    """N rows of (outcome y, treatment label d, covariates z).

    Construction does not validate; call :func:`validate` for a list of
    violations, or :meth:`checked` to raise on the first problem.
    """

    outcomes: np.ndarray
    treatments: np.ndarray
    covariates: np.ndarray
    treatment_space: TreatmentSpace

    def __post_init__(self):
        y = np.asarray(self.outcomes, dtype=float)
        d = np.asarray(self.treatments).astype(str)
        z = np.asarray(self.covariates, dtype=float)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        for arr in (y, d, z):
            arr.setflags(write=False)
        object.__setattr__(self, "outcomes", y)
        object.__setattr__(self, "treatments", d)
        object.__setattr__(self, "covariates", z)

    @property
    def n_rows(self) -> int:
        return len(self.outcomes)

    @property
    def n_features(self) -> int:
        return self.covariates.shape[1]

    def treatment_codes(self) -> np.ndarray:
        """Integer level index per row (-1 for labels outside the space)."""
        lookup = {lab: i for i, lab in enumerate(self.treatment_space.labels)}
        return np.array([lookup.get(t, -1) for t in self.treatments], dtype=int)

    def subset(self, index) -> "ObservationSet":
        index = np.asarray(index, dtype=int)
        return ObservationSet(
            self.outcomes[index], self.treatments[index], self.covariates[index], self.treatment_space
        )

    def checked(self) -> "ObservationSet":
        problems = validate(self)
        if problems:
            raise DataError("; ".join(problems[:5]) + (" ..." if len(problems) > 5 else ""))
        return self


@dataclass(frozen=True)
class SplitIndex:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def sizes(self) -> tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)

    def get(self, name: str) -> np.ndarray:
        return {"train": self.train, "validation": self.validation, "test": self.test}[name]


@dataclass(frozen=True)
class BinaryRelabeling:
    target_level: str
    indicator: np.ndarray = field(repr=False)


def validate(dataset: ObservationSet) -> list[str]:
    """Return a list of invariant violations (empty when the set is valid).

    Rows are reported 1-based.
    """
    problems: list[str] = []
    y, d, z = dataset.outcomes, dataset.treatments, dataset.covariates
    if not (len(y) == len(d) == z.shape[0]):
        problems.append(
            f"length mismatch: {len(y)} outcomes, {len(d)} treatments, {z.shape[0]} covariate rows"
        )
        return problems
    space = set(dataset.treatment_space.labels)
    for m in range(len(y)):
        if not math.isfinite(y[m]):
            problems.append(f"row {m + 1}: outcome is not finite ({y[m]})")
        if d[m] not in space:
            problems.append(f"row {m + 1}: treatment {d[m]!r} is not in the treatment space")
        if not np.all(np.isfinite(z[m])):
            problems.append(f"row {m + 1}: covariates contain non-finite values")
    return problems


def relabel(dataset: ObservationSet, level: str) -> BinaryRelabeling:
    """0/1 indicator of rows treated at ``level``."""
    if level not in dataset.treatment_space:
        raise DataError(f"unknown treatment level {level!r}; space is {dataset.treatment_space.labels}")
    indicator = (dataset.treatments == str(level)).astype(float)
    indicator.setflags(write=False)
    return BinaryRelabeling(str(level), indicator)


def split(n_rows: int | ObservationSet, ratios=(0.56, 0.14, 0.30), seed: int = 0) -> SplitIndex:
    """Permute rows with ``seed`` and slice into train/validation/test.

    Validation and test get ``floor(N * fraction)`` rows, training absorbs
    the remainder.
    """
    n = n_rows.n_rows if isinstance(n_rows, ObservationSet) else int(n_rows)
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise DataError(f"split ratios must be three positive fractions, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {sum(ratios)}")
    if n < 3:
        raise DataError(f"need at least 3 rows to populate train/validation/test, got {n}")
    n_val = int(math.floor(n * ratios[1] + 1e-9))
    n_test = int(math.floor(n * ratios[2] + 1e-9))
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise DataError(f"N={n} is too small for ratios {ratios}: sizes {(n_train, n_val, n_test)}")
    perm = np.random.default_rng(seed).permutation(n)
    return SplitIndex(
        train=np.sort(perm[:n_train]),
        validation=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
    )


# -- CSV ---------------------------------------------------------------------


def read_csv(path, levels: Sequence[str] | None = None) -> ObservationSet:
    """Read a ``y,d,z1,...,zp`` file.

    ``levels`` fixes the treatment space and its order; otherwise the observed
    tokens are used in natural sort order.
    """
    path = Path(path)
    ys, ds, zs = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 3 or header[0] != "y" or header[1] != "d":
            raise DataError(f"{path}, line 1: header must be y,d,z1,...,zp; got {','.join(header)}")
        p = len(header) - 2
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != p + 2:
                raise DataError(f"{path}, line {lineno}: expected {p + 2} fields, found {len(row)}")
            try:
                ys.append(float(row[0]))
                zs.append([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{path}, line {lineno}: {exc}") from None
            ds.append(row[1].strip())
    if not ys:
        raise DataError(f"{path}: no data rows")
    space = TreatmentSpace(tuple(levels)) if levels is not None else TreatmentSpace.from_observed(ds)
    return ObservationSet(np.array(ys), np.array(ds), np.array(zs), space)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_csv(dataset: ObservationSet, path) -> None:
    path = Path(path)
    p = dataset.n_features
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["y", "d"] + [f"z{j + 1}" for j in range(p)])
        for y, d, z in zip(dataset.outcomes, dataset.treatments, dataset.covariates):
            writer.writerow([_fmt(y), d] + [_fmt(v) for v in z])


def write_truth(levels: Sequence[str], theta: Sequence[float], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["level", "theta_true"])
        for lev, th in zip(levels, theta):
            writer.writerow([lev, _fmt(th)])


def read_truth(path) -> tuple[tuple[str, ...], np.ndarray]:
    """Read a ``level,theta_true`` sidecar; returns (levels, theta)."""
    path = Path(path)
    levels, theta = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["level", "theta_true"]:
            raise DataError(f"{path}, line 1: header must be level,theta_true")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{path}, line {lineno}: expected 2 fields")
            try:
                theta.append(float(row[1]))
            except ValueError as exc:
                raise DataError(f"{path}, line {lineno}: {exc}") from None
            levels.append(row[0].strip())
    return tuple(levels), np.array(theta)
