"""Residual moments, RCL weight coefficients and pointwise scores.

The RCL weight for treatment level i is

    A = b_bar * nu**r + [k != 1] * sum_{q=1}^{k-1} b_q * (nu**q - m_q),

with nu = 1{D = d_i} - pi_i(Z) and m_q the sample mean of nu**q. The
coefficients make the sample mean of A exactly one and zero out the
first k-1 propensity derivatives of its expectation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

DEGENERATE_MOMENT = 1e-12
MAX_ORDER = 60


class DegenerateMomentError(ValueError):
    """The r-th residual moment is (numerically) zero, so b_bar is undefined."""


class SingularSystemError(ValueError):
    pass


def binom(n: int, k: int) -> float:
    """Binomial coefficient by the multiplicative formula, in floating point."""
    if n > MAX_ORDER:
        raise ValueError(f"order {n} exceeds the supported maximum {MAX_ORDER}")
    if k < 0 or k > n:
        return 0.0
    k = min(k, n - k)
    out = 1.0
    for j in range(1, k + 1):
        out = out * (n - k + j) / j
    return out


def _check_orders(r: int, k: int):
    if int(r) != r or int(k) != k or r < 1 or k < 1:
        raise ValueError(f"need integers r >= 1 and k >= 1, got r={r}, k={k}")
    if r > MAX_ORDER or k > MAX_ORDER:
        raise ValueError(f"orders above {MAX_ORDER} are not supported")
    if k > r:
        warnings.warn(f"k={k} exceeds r={r}; the orthogonality guarantee is only stated for k <= r", stacklevel=3)


@dataclass(frozen=True)
class ResidualMoments:
    """m[q] = mean((indicator - propensity)**q) for q = 0..max(r, k-1)."""

    level: str | None
    m: Mapping[int, float]

    def __getitem__(self, q: int) -> float:
        return self.m[q]

    @property
    def order(self) -> int:
        return max(self.m)

    @classmethod
    def from_values(cls, values, level=None) -> "ResidualMoments":
        """Wrap a sequence ``(m1, m2, ...)``; m[0] = 1 is prepended."""
        m = {0: 1.0}
        m.update({q + 1: float(v) for q, v in enumerate(values)})
        return cls(level, m)


@dataclass(frozen=True)
class RclCoefficients:
    r: int
    k: int
    b_bar: float
    b: Mapping[int, float] = field(default_factory=dict)

    def as_vector(self) -> np.ndarray:
        """(b_1, ..., b_{k-1}, b_bar)."""
        return np.array([self.b[q] for q in range(1, self.k)] + [self.b_bar])


@dataclass(frozen=True)
class ScoreKind:
    name: str
    r: int = 2
    k: int = 1

    def __post_init__(self):
        name = self.name.upper()
        if name not in ("DR", "IPW", "DML", "RCL"):
            raise ValueError(f"unknown score {self.name!r}")
        object.__setattr__(self, "name", name)
        if name == "RCL" and (self.r < 1 or self.k < 1):
            raise ValueError("RCL needs r >= 1 and k >= 1")

    @classmethod
    def parse(cls, text: str) -> "ScoreKind":
        """Accepts DR, IPW, DML, RCL, RCL(2,2), RCL_2_2 or RCL22."""
        t = text.strip().upper().replace(" ", "")
        if not t.startswith("RCL"):
            return cls(t)
        rest = t[3:].strip("(_)").replace(")", "")
        if not rest:
            return cls("RCL")
        parts = [p for p in rest.replace(",", "_").split("_") if p]
        if len(parts) == 1 and len(parts[0]) == 2:
            parts = list(parts[0])
        return cls("RCL", int(parts[0]), int(parts[1]))

    @property
    def label(self) -> str:
        return f"RCL_{self.r}_{self.k}" if self.name == "RCL" else self.name


def residual_moments(indicator, propensities, r: int, k: int, level=None) -> ResidualMoments:
    """Global empirical moments of the treatment residual up to max(r, k-1)."""
    _check_orders(r, k)
    ind = np.asarray(indicator, dtype=float).ravel()
    pi = np.asarray(propensities, dtype=float).ravel()
    if len(ind) != len(pi) or len(ind) == 0:
        raise ValueError(f"indicator ({len(ind)}) and propensities ({len(pi)}) must be non-empty and aligned")
    nu = ind - pi
    top = max(r, k - 1)
    m = {0: 1.0}
    power = np.ones_like(nu)
    for q in range(1, top + 1):
        power = power * nu
        m[q] = float(power.mean())
    if abs(m[r]) < DEGENERATE_MOMENT:
        raise DegenerateMomentError(
            f"residual moment of order {r} is {m[r]:.3g}; the RCL weight is undefined (need a nonzero r-th moment)"
        )
    return ResidualMoments(level, m)


def rcl_coefficients(moments: ResidualMoments, r: int, k: int) -> RclCoefficients:
    """b_bar = 1/m_r, then b_q for q = k-1 down to 1 by back-substitution."""
    _check_orders(r, k)
    m = moments.m
    need = max(r, k - 1)
    if any(q not in m for q in range(need + 1)):
        raise ValueError(f"moments up to order {need} are required")
    if abs(m[r]) < DEGENERATE_MOMENT:
        raise DegenerateMomentError(f"residual moment of order {r} is {m[r]:.3g}")
    b_bar = 1.0 / m[r]
    b: dict[int, float] = {}
    for q in range(k - 1, 0, -1):
        # C(r, q) = 0 when q > r (possible only when k > r)
        acc = -b_bar * binom(r, q) * m[r - q] if q <= r else 0.0
        for u in range(1, k - q):
            acc -= b[q + u] * binom(q + u, q) * m[u]
        b[q] = acc
    return RclCoefficients(r, k, b_bar, dict(sorted(b.items())))


def rcl_system(moments: ResidualMoments, r: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Linear system for the unknowns (b_1, ..., b_{k-1}, b_bar).

    Row 0: b_bar * m_r = 1 (the normalization; the centred q-terms drop out).
    Row q (1 <= q <= k-1): b_bar C(r,q) m_{r-q} + sum_{u=q}^{k-1} b_u C(u,q) m_{u-q} = 0.
    """
    m = moments.m
    M = np.zeros((k, k))
    rhs = np.zeros(k)
    M[0, k - 1] = m[r]
    rhs[0] = 1.0
    for q in range(1, k):
        M[q, k - 1] = binom(r, q) * m[r - q] if q <= r else 0.0
        for u in range(q, k):
            M[q, u - 1] = binom(u, q) * m[u - q]
    return M, rhs


def _solve_partial_pivot(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    A = np.array(M, dtype=float)
    x = np.array(rhs, dtype=float)
    n = len(x)
    scale = max(np.abs(A).max(), 1.0)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(A[col:, col])))
        if abs(A[piv, col]) < 1e-14 * scale:
            raise SingularSystemError(f"singular coefficient system: pivot {col} is {A[piv, col]:.3g}")
        if piv != col:
            A[[col, piv]] = A[[piv, col]]
            x[[col, piv]] = x[[piv, col]]
        f = A[col + 1 :, col] / A[col, col]
        A[col + 1 :, col:] -= np.outer(f, A[col, col:])
        x[col + 1 :] -= f * x[col]
    out = np.zeros(n)
    for row in range(n - 1, -1, -1):
        out[row] = (x[row] - A[row, row + 1 :] @ out[row + 1 :]) / A[row, row]
    return out


def rcl_coefficients_oracle(moments: ResidualMoments, r: int, k: int) -> RclCoefficients:
    """Solve all k coefficient equations at once by Gaussian elimination."""
    _check_orders(r, k)
    if any(q not in moments.m for q in range(max(r, k - 1) + 1)):
        raise ValueError(f"moments up to order {max(r, k - 1)} are required")
    if abs(moments.m[r]) < DEGENERATE_MOMENT:
        raise DegenerateMomentError(f"residual moment of order {r} is {moments.m[r]:.3g}")
    M, rhs = rcl_system(moments, r, k)
    sol = _solve_partial_pivot(M, rhs)
    return RclCoefficients(r, k, float(sol[-1]), {q: float(sol[q - 1]) for q in range(1, k)})


def weight_A(indicator, propensity, coeffs: RclCoefficients, moments: ResidualMoments):
    """RCL weight A for scalar or array inputs.

    No division by the propensity occurs, so A is bounded whenever |nu| <= 1.
    """
    nu = np.asarray(indicator, dtype=float) - np.asarray(propensity, dtype=float)
    out = coeffs.b_bar * nu**coeffs.r
    for q, bq in coeffs.b.items():
        out = out + bq * (nu**q - moments.m[q])
    return float(out) if np.ndim(out) == 0 else out


def score_value(kind: ScoreKind, theta, y, indicator, g_hat, pi_hat, coeffs=None, moments=None):
    """Pointwise score psi(W; theta, g, pi); vectorizes over array inputs.

    IPW and DML divide by the propensity; a treated row with zero propensity
    yields a signed infinity (or NaN when its residual is zero) instead of
    raising.
    """
    theta, y, ind, g, pi = (np.asarray(v, dtype=float) for v in (theta, y, indicator, g_hat, pi_hat))
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind.name == "DR":
            out = theta - g
        elif kind.name == "IPW":
            out = theta - np.where(ind != 0, y * ind / pi, 0.0)
        elif kind.name == "DML":
            out = theta - g - np.where(ind != 0, ind * (y - g) / pi, 0.0)
        else:
            if coeffs is None or moments is None:
                raise ValueError("the RCL score needs coefficients and moments")
            out = theta - g - (y - g) * weight_A(ind, pi, coeffs, moments)
    return float(out) if np.ndim(out) == 0 else out
