"""Outcome regressors and propensity classifiers for the nuisance functions.

Regressors: lasso (cyclic coordinate descent), ridge (normal equations),
random forest (bagged CART). Classifiers: multinomial logistic regression
(accelerated gradient descent on softmax cross-entropy), random forest.
All are deterministic given their spec's seed.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

import numpy as np

from .data import DataError, ObservationSet, TreatmentSpace
from .trees import fit_forest


class LearnerError(ValueError):
    pass


REGRESSOR_KINDS = ("lasso", "ridge", "random_forest")
CLASSIFIER_KINDS = ("logistic", "random_forest")

_REGRESSOR_DEFAULTS = {
    "lasso": {"lam": 0.01, "tol": 1e-8, "max_iter": 10_000},
    "ridge": {"lam": 0.01},
    "random_forest": {"n_trees": 50, "max_depth": 8, "min_leaf": 5, "max_features": None, "bootstrap": True},
}
_CLASSIFIER_DEFAULTS = {
    "logistic": {"l2": 1e-4, "tol": 1e-6, "max_iter": 2000},
    "random_forest": {"n_trees": 50, "max_depth": 8, "min_leaf": 5, "max_features": None, "bootstrap": True},
}

# Candidate values scored on the validation split (MSE for regressors,
# log-loss for classifiers) when tuning is enabled.
DEFAULT_GRIDS: dict[tuple[str, str], dict[str, list]] = {
    ("regressor", "lasso"): {"lam": [0.001, 0.01, 0.1, 1.0]},
    ("regressor", "ridge"): {"lam": [0.001, 0.01, 0.1, 1.0]},
    ("regressor", "random_forest"): {"max_depth": [4, 8], "min_leaf": [5, 20]},
    ("classifier", "logistic"): {"l2": [1e-4, 1e-2]},
    ("classifier", "random_forest"): {"max_depth": [4, 8], "min_leaf": [5, 20]},
}


@dataclass(frozen=True)
class RegressorSpec:
    kind: str = "lasso"
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in REGRESSOR_KINDS:
            raise LearnerError(f"unknown regressor kind {self.kind!r}; choose from {REGRESSOR_KINDS}")
        _check_keys(self.kind, self.hyperparameters, _REGRESSOR_DEFAULTS[self.kind])
        merged = {**_REGRESSOR_DEFAULTS[self.kind], **dict(self.hyperparameters)}
        object.__setattr__(self, "hyperparameters", merged)
        _check_common(merged)

    @property
    def params(self) -> dict:
        return dict(self.hyperparameters)


@dataclass(frozen=True)
class ClassifierSpec:
    kind: str = "logistic"
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CLASSIFIER_KINDS:
            raise LearnerError(f"unknown classifier kind {self.kind!r}; choose from {CLASSIFIER_KINDS}")
        _check_keys(self.kind, self.hyperparameters, _CLASSIFIER_DEFAULTS[self.kind])
        merged = {**_CLASSIFIER_DEFAULTS[self.kind], **dict(self.hyperparameters)}
        object.__setattr__(self, "hyperparameters", merged)
        _check_common(merged)

    @property
    def params(self) -> dict:
        return dict(self.hyperparameters)


def _check_keys(kind, given, defaults):
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise LearnerError(f"unknown hyperparameter(s) {unknown} for {kind}; known: {sorted(defaults)}")


def _check_common(h):
    if h.get("lam", 0) < 0:
        raise LearnerError(f"lambda must be >= 0, got {h['lam']}")
    if h.get("l2", 0) < 0:
        raise LearnerError(f"L2 strength must be >= 0, got {h['l2']}")
    if "tol" in h and not h["tol"] > 0:
        raise LearnerError(f"tolerance must be > 0, got {h['tol']}")
    if "max_iter" in h and int(h["max_iter"]) < 1:
        raise LearnerError("max_iter must be >= 1")
    if "n_trees" in h and int(h["n_trees"]) < 1:
        raise LearnerError("tree count must be >= 1")
    if "max_depth" in h and int(h["max_depth"]) < 1:
        raise LearnerError("max_depth must be >= 1")


def _as_xy(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if not np.all(np.isfinite(X)):
        raise LearnerError("covariates contain non-finite values")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if len(y) != X.shape[0]:
        raise LearnerError(f"X has {X.shape[0]} rows but y has {len(y)}")
    if not np.all(np.isfinite(y)):
        raise LearnerError("outcomes contain non-finite values")
    return X, y


def _standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return mu, sd


class _Fitted:
    n_features: int

    def _check(self, X):
        X = _as_xy(X)
        if X.shape[1] != self.n_features:
            raise LearnerError(f"model was fitted on {self.n_features} features, got {X.shape[1]}")
        return X


# -- regressors --------------------------------------------------------------


def soft_threshold(x: float, lam: float) -> float:
    return math.copysign(max(abs(x) - lam, 0.0), x)


class LassoModel(_Fitted):
    """Lasso on standardized columns with an unpenalized intercept.

    Minimizes ``(1/2N)||y - b0 - Xs b||^2 + lam ||b||_1`` by cyclic
    coordinate descent; coefficients are reported on the original scale.
    ``objective_path`` holds the objective after every sweep.
    """

    def __init__(self, lam, tol=1e-8, max_iter=10_000):
        self.lam, self.tol, self.max_iter = float(lam), float(tol), int(max_iter)

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        n, p = X.shape
        self.n_features = p
        mu, sd = _standardize(X)
        Xs = (X - mu) / sd
        ybar = y.mean()
        col_sq = (Xs * Xs).mean(axis=0)
        beta = np.zeros(p)
        resid = y - ybar
        self.objective_path = []
        self.n_sweeps = 0
        for _ in range(self.max_iter):
            max_change = 0.0
            for j in range(p):
                if col_sq[j] == 0.0:
                    continue
                xj = Xs[:, j]
                rho = xj @ resid / n + col_sq[j] * beta[j]
                new = soft_threshold(rho, self.lam) / col_sq[j]
                delta = new - beta[j]
                if delta != 0.0:
                    resid -= delta * xj
                    beta[j] = new
                    max_change = max(max_change, abs(delta))
            self.n_sweeps += 1
            self.objective_path.append(0.5 * resid @ resid / n + self.lam * np.abs(beta).sum())
            if max_change < self.tol:
                break
        self.coef_std = beta
        self.coef = beta / sd
        self.intercept = ybar - mu @ self.coef
        return self

    def predict(self, X):
        return self._check(X) @ self.coef + self.intercept


class RidgeModel(_Fitted):
    """Ridge on standardized columns: ``(1/2N)||y - b0 - Xs b||^2 + (lam/2)||b||^2``."""

    def __init__(self, lam):
        self.lam = float(lam)

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        n, p = X.shape
        self.n_features = p
        mu, sd = _standardize(X)
        Xs = (X - mu) / sd
        ybar = y.mean()
        gram = Xs.T @ Xs / n + self.lam * np.eye(p)
        beta = np.linalg.lstsq(gram, Xs.T @ (y - ybar) / n, rcond=None)[0]
        self.coef = beta / sd
        self.intercept = ybar - mu @ self.coef
        return self

    def predict(self, X):
        return self._check(X) @ self.coef + self.intercept


class ForestRegressor(_Fitted):
    def __init__(self, n_trees=50, max_depth=8, min_leaf=5, max_features=None, seed=0, bootstrap=True):
        self.n_trees, self.max_depth, self.min_leaf = int(n_trees), int(max_depth), int(min_leaf)
        self.max_features, self.seed, self.bootstrap = max_features, seed, bootstrap

    def fit(self, X, y):
        X, y = _as_xy(X, y)
        self.n_features = X.shape[1]
        mf = self.max_features
        if mf is None:
            mf = max(1, math.ceil(X.shape[1] / 3))
        self.trees = fit_forest(
            X, y, n_trees=self.n_trees, max_depth=self.max_depth, min_leaf=self.min_leaf,
            max_features=mf, seed=self.seed, bootstrap=self.bootstrap,
        )
        return self

    def predict(self, X):
        X = self._check(X)
        return np.mean([t.predict(X) for t in self.trees], axis=0)


class ConstantModel(_Fitted):
    """Predicts a fixed value; mostly useful in tests."""

    def __init__(self, value, n_features):
        self.value, self.n_features = float(value), int(n_features)

    def predict(self, X):
        return np.full(self._check(X).shape[0], self.value)


def fit_regressor(spec: RegressorSpec, X, y):
    X, y = _as_xy(X, y)
    if X.shape[0] < 2:
        raise LearnerError("need at least 2 rows to fit a regressor")
    h = spec.params
    if spec.kind == "lasso":
        return LassoModel(h["lam"], h["tol"], h["max_iter"]).fit(X, y)
    if spec.kind == "ridge":
        return RidgeModel(h["lam"]).fit(X, y)
    return ForestRegressor(
        h["n_trees"], h["max_depth"], h["min_leaf"], h["max_features"], seed=spec.seed,
        bootstrap=h.get("bootstrap", True),
    ).fit(X, y)


def residuals(model, X, y) -> np.ndarray:
    y = np.asarray(y, dtype=float).ravel()
    pred = model.predict(X)
    if len(pred) != len(y):
        raise LearnerError(f"{len(pred)} predictions for {len(y)} outcomes")
    return y - pred


# -- classifiers -------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


class LogisticModel(_Fitted):
    """Multinomial logistic regression.

    Minimizes mean softmax cross-entropy plus ``(l2/2)||W||^2`` (intercepts
    unpenalized) with Nesterov-accelerated gradient descent, step ``1/L``
    from the log-sum-exp curvature bound, restarting momentum whenever the
    loss goes up. Stops when the largest gradient entry drops below ``tol``.
    """

    def __init__(self, n_classes, l2=1e-4, tol=1e-6, max_iter=2000):
        self.n_classes, self.l2, self.tol, self.max_iter = int(n_classes), float(l2), float(tol), int(max_iter)

    def _design(self, X):
        Xs = (X - self.mu) / self.sd
        return np.hstack([np.ones((X.shape[0], 1)), Xs])

    def fit(self, X, codes):
        X = _as_xy(X)
        codes = np.asarray(codes, dtype=int)
        n, p = X.shape
        self.n_features = p
        self.mu, self.sd = _standardize(X)
        Xa = self._design(X)
        K = self.n_classes
        Y = np.zeros((n, K))
        Y[np.arange(n), codes] = 1.0
        penalty = np.ones((p + 1, 1))
        penalty[0] = 0.0

        def loss_grad(W):
            logits = Xa @ W
            m = logits.max(axis=1, keepdims=True)
            lse = (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True))).ravel()
            loss = np.mean(lse - (logits * Y).sum(axis=1)) + 0.5 * self.l2 * np.sum(penalty * W * W)
            P = np.exp(logits - lse[:, None])
            grad = Xa.T @ (P - Y) / n + self.l2 * penalty * W
            return loss, grad

        lip = 0.5 * np.linalg.eigvalsh(Xa.T @ Xa / n).max() + self.l2
        step = 1.0 / lip
        W = np.zeros((p + 1, K))
        freq = Y.mean(axis=0)
        W[0] = np.log(np.clip(freq, 1e-12, None))
        V, t = W.copy(), 1.0
        prev_loss = np.inf
        self.n_iter = 0
        for it in range(self.max_iter):
            loss_v, grad_v = loss_grad(V)
            W_next = V - step * grad_v
            t_next = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
            loss_w, grad_w = loss_grad(W_next)
            if loss_w > prev_loss:
                # momentum overshoot: restart from the last iterate
                V, t = W.copy(), 1.0
                continue
            V = W_next + ((t - 1) / t_next) * (W_next - W)
            W, t, prev_loss = W_next, t_next, loss_w
            self.n_iter = it + 1
            if np.abs(grad_w).max() < self.tol:
                break
        self.W = W
        self.final_loss = prev_loss
        return self

    def predict_proba(self, X):
        return softmax(self._design(self._check(X)) @ self.W)


class ForestClassifier(_Fitted):
    def __init__(self, n_classes, n_trees=50, max_depth=8, min_leaf=5, max_features=None, seed=0, bootstrap=True):
        self.n_classes = int(n_classes)
        self.n_trees, self.max_depth, self.min_leaf = int(n_trees), int(max_depth), int(min_leaf)
        self.max_features, self.seed, self.bootstrap = max_features, seed, bootstrap

    def fit(self, X, codes):
        X = _as_xy(X)
        codes = np.asarray(codes, dtype=int)
        self.n_features = X.shape[1]
        Y = np.zeros((X.shape[0], self.n_classes))
        Y[np.arange(X.shape[0]), codes] = 1.0
        mf = self.max_features
        if mf is None:
            mf = max(1, math.isqrt(X.shape[1]))
        self.trees = fit_forest(
            X, Y, n_trees=self.n_trees, max_depth=self.max_depth, min_leaf=self.min_leaf,
            max_features=mf, seed=self.seed, n_classes=self.n_classes, bootstrap=self.bootstrap,
        )
        return self

    def predict_proba(self, X):
        X = self._check(X)
        P = np.mean([t.predict(X) for t in self.trees], axis=0)
        return P / P.sum(axis=1, keepdims=True)


def fit_classifier(spec: ClassifierSpec, X, labels, classes: Sequence[str] | None = None):
    """Fit a propensity model returning a full probability simplex per row.

    ``classes`` fixes the output column order (normally the treatment space
    labels); every class must appear in ``labels``.
    """
    X = _as_xy(X)
    labels = np.asarray(labels).astype(str)
    if len(labels) != X.shape[0]:
        raise LearnerError(f"X has {X.shape[0]} rows but {len(labels)} labels")
    classes = tuple(sorted(set(labels))) if classes is None else tuple(str(c) for c in classes)
    present = set(labels)
    missing = [c for c in classes if c not in present]
    if missing:
        raise LearnerError(f"treatment level(s) {missing} absent from training data; cannot estimate propensity")
    if len(classes) < 2:
        raise LearnerError("need at least 2 distinct labels")
    extra = present - set(classes)
    if extra:
        raise LearnerError(f"labels {sorted(extra)} are not among the classes {classes}")
    lookup = {c: i for i, c in enumerate(classes)}
    codes = np.array([lookup[l] for l in labels])
    h = spec.params
    if spec.kind == "logistic":
        model = LogisticModel(len(classes), h["l2"], h["tol"], h["max_iter"]).fit(X, codes)
    else:
        model = ForestClassifier(
            len(classes), h["n_trees"], h["max_depth"], h["min_leaf"], h["max_features"], seed=spec.seed,
            bootstrap=h.get("bootstrap", True),
        ).fit(X, codes)
    model.classes = classes
    return model


# -- tuning and the nuisance bundle -----------------------------------------


def _grid(kind_key, grid):
    grid = DEFAULT_GRIDS.get(kind_key, {}) if grid is None else grid
    if not grid:
        return [{}]
    keys = sorted(grid)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]


def tune_regressor(spec: RegressorSpec, X_train, y_train, X_val, y_val, grid=None) -> RegressorSpec:
    """Return the grid candidate with the lowest validation MSE (ties: first)."""
    if len(y_val) == 0:
        return spec
    best, best_spec = np.inf, spec
    for cand in _grid(("regressor", spec.kind), grid):
        s = replace(spec, hyperparameters={**spec.params, **cand})
        mse = float(np.mean(residuals(fit_regressor(s, X_train, y_train), X_val, y_val) ** 2))
        if mse < best:
            best, best_spec = mse, s
    return best_spec


def tune_classifier(spec: ClassifierSpec, X_train, labels_train, X_val, labels_val, classes, grid=None) -> ClassifierSpec:
    """Return the grid candidate with the lowest validation log-loss."""
    if len(labels_val) == 0:
        return spec
    lookup = {c: i for i, c in enumerate(classes)}
    codes = np.array([lookup[str(l)] for l in labels_val])
    best, best_spec = np.inf, spec
    for cand in _grid(("classifier", spec.kind), grid):
        s = replace(spec, hyperparameters={**spec.params, **cand})
        P = fit_classifier(s, X_train, labels_train, classes).predict_proba(X_val)
        ll = -float(np.mean(np.log(np.clip(P[np.arange(len(codes)), codes], 1e-300, None))))
        if ll < best:
            best, best_spec = ll, s
    return best_spec


@dataclass
class NuisanceFit:
    """Fitted outcome model per level plus one joint propensity model."""

    treatment_space: TreatmentSpace
    outcome_models: tuple
    propensity_model: Any
    regressor_specs: tuple = ()
    classifier_spec: ClassifierSpec | None = None
    train_index: np.ndarray | None = field(default=None, repr=False)

    def g_hat(self, Z) -> np.ndarray:
        """N x n matrix of outcome predictions."""
        return np.column_stack([m.predict(Z) for m in self.outcome_models])

    def pi_hat(self, Z) -> np.ndarray:
        """N x n matrix of propensities; rows sum to 1."""
        return self.propensity_model.predict_proba(Z)


@dataclass
class FixedNuisance:
    """Nuisance values known row-by-row for one specific sample.

    Used for oracle (true) nuisances and their deliberate corruptions; the
    covariate argument is only checked for its row count.
    """

    treatment_space: TreatmentSpace
    g: np.ndarray
    pi: np.ndarray

    def _rows(self, Z):
        n = np.asarray(Z).shape[0]
        if n != self.g.shape[0]:
            raise LearnerError(f"fixed nuisances cover {self.g.shape[0]} rows, asked for {n}")

    def g_hat(self, Z) -> np.ndarray:
        self._rows(Z)
        return self.g

    def pi_hat(self, Z) -> np.ndarray:
        self._rows(Z)
        return self.pi

    def subset(self, index) -> "FixedNuisance":
        return FixedNuisance(self.treatment_space, self.g[index], self.pi[index])


def fit_nuisances(
    data: ObservationSet,
    train_index,
    regressor: RegressorSpec | Sequence[RegressorSpec],
    classifier: ClassifierSpec,
    validation_index=None,
    tune: bool = False,
    regressor_grid=None,
    classifier_grid=None,
) -> NuisanceFit:
    """Fit one outcome regressor per treatment level and a joint classifier.

    Only rows in ``train_index`` are used for fitting. With ``tune`` the
    hyperparameters are chosen on ``validation_index`` first. ``regressor``
    may also be one spec per level (e.g. specs tuned on another replication).
    """
    space = data.treatment_space
    per_level = [regressor] * space.n if isinstance(regressor, RegressorSpec) else list(regressor)
    if len(per_level) != space.n:
        raise LearnerError(f"{len(per_level)} regressor specs for {space.n} levels")
    train_index = np.asarray(train_index, dtype=int)
    Z, y, d = data.covariates, data.outcomes, data.treatments
    Ztr, ytr, dtr = Z[train_index], y[train_index], d[train_index]
    do_tune = tune and validation_index is not None and len(validation_index) > 0
    if do_tune:
        vi = np.asarray(validation_index, dtype=int)
        Zva, yva, dva = Z[vi], y[vi], d[vi]
    models, specs = [], []
    for level, spec in zip(space.labels, per_level):
        mask = dtr == level
        if mask.sum() < 2:
            raise DataError(f"level {level!r} has {int(mask.sum())} training rows; need at least 2")
        if do_tune:
            vmask = dva == level
            spec = tune_regressor(spec, Ztr[mask], ytr[mask], Zva[vmask], yva[vmask], regressor_grid)
        specs.append(spec)
        models.append(fit_regressor(spec, Ztr[mask], ytr[mask]))
    cspec = classifier
    if do_tune:
        cspec = tune_classifier(classifier, Ztr, dtr, Zva, dva, space.labels, classifier_grid)
    prop = fit_classifier(cspec, Ztr, dtr, space.labels)
    return NuisanceFit(space, tuple(models), prop, tuple(specs), cspec, train_index)
