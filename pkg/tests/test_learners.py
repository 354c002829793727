import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_set
from rcl.learners import (
    ClassifierSpec, ConstantModel, LassoModel, LearnerError, LogisticModel, RegressorSpec, fit_classifier,
    fit_nuisances, fit_regressor, residuals, soft_threshold,
)
from rcl.simulate import DgpConfig, generate
from rcl.trees import RegressionTree


def test_lasso_soft_threshold_single_feature():
    # one standardized column (mean 0, (1/N) x'x = 1) with (1/N) x'(y - ybar) = 0.5
    x = np.array([1.0, -1.0, 1.0, -1.0])
    y = 0.5 * x + 3.0
    m = LassoModel(lam=0.2).fit(x[:, None], y)
    assert m.coef_std[0] == pytest.approx(0.3, abs=1e-12)
    assert m.intercept == pytest.approx(3.0)


def test_lasso_full_shrinkage(rng):
    X = rng.normal(size=(50, 3))
    y = X @ [1.0, -2.0, 0.5] + rng.normal(size=50)
    Xs = (X - X.mean(0)) / X.std(0)
    lam = np.abs(Xs.T @ (y - y.mean()) / 50).max()
    m = LassoModel(lam=lam).fit(X, y)
    assert np.all(m.coef == 0) and m.intercept == pytest.approx(y.mean())


def test_lasso_objective_never_increases(rng):
    X = rng.normal(size=(200, 6))
    X[:, 1] = X[:, 0] + 0.01 * rng.normal(size=200)
    y = X[:, 0] - X[:, 3] + rng.normal(size=200)
    path = LassoModel(lam=0.05).fit(X, y).objective_path
    assert all(b <= a + 1e-12 for a, b in zip(path, path[1:]))


def test_lasso_kkt(rng):
    X = rng.normal(size=(300, 5))
    y = X @ [2.0, 0, 0, -1.0, 0] + rng.normal(size=300)
    lam = 0.1
    m = LassoModel(lam=lam, tol=1e-12).fit(X, y)
    Xs = (X - X.mean(0)) / X.std(0)
    grad = Xs.T @ (y - m.predict(X)) / len(y)
    for g, b in zip(grad, m.coef_std):
        if b != 0:
            assert g == pytest.approx(lam * np.sign(b), abs=1e-6)
        else:
            assert abs(g) <= lam + 1e-6


def test_soft_threshold():
    assert soft_threshold(0.5, 0.2) == pytest.approx(0.3)
    assert soft_threshold(-0.1, 0.2) == 0.0


def _best_single_split(x, y, min_leaf):
    """Exhaustive O(n^2) search over thresholds between distinct sorted values."""
    best = np.inf
    xs = np.unique(x)
    for lo, hi in zip(xs, xs[1:]):
        t = 0.5 * (lo + hi)
        left, right = y[x <= t], y[x > t]
        if len(left) < min_leaf or len(right) < min_leaf:
            continue
        sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
        best = min(best, sse)
    return best


def test_stump_matches_exhaustive_split(rng):
    for _ in range(10):
        X = rng.normal(size=(40, 3))
        y = np.where(X[:, 0] > 0.2, 2.0, -1.0) + 0.3 * rng.normal(size=40)
        tree = RegressionTree(max_depth=1, min_leaf=1).fit(X, y, rng)
        sse = ((y - tree.predict(X)) ** 2).sum()
        oracle = min(_best_single_split(X[:, j], y, 1) for j in range(3))
        assert sse == pytest.approx(oracle, rel=1e-10)


def test_one_tree_forest_beats_variance():
    X = np.linspace(-1, 1, 40)[:, None]
    y = np.where(X[:, 0] > 0.1, 5.0, 1.0)
    spec = RegressorSpec("random_forest", {"n_trees": 1, "max_depth": 1, "min_leaf": 1, "bootstrap": False})
    m = fit_regressor(spec, X, y)
    assert np.mean((y - m.predict(X)) ** 2) < y.var()
    assert np.mean((y - m.predict(X)) ** 2) == pytest.approx(0.0)


def test_residual_examples():
    assert residuals(ConstantModel(1.5, 1), np.zeros((2, 1)), [1.0, 2.0]).tolist() == [-0.5, 0.5]
    X = np.arange(5.0)[:, None]
    m = fit_regressor(RegressorSpec("ridge", {"lam": 0.0}), X, 2 * X[:, 0] + 1)
    assert np.allclose(residuals(m, X, 2 * X[:, 0] + 1), 0.0)


def test_lasso_residual_mean_on_dgp():
    data, truth = generate(DgpConfig(N=10_000, seed=5))
    m = fit_regressor(RegressorSpec("lasso"), data.covariates, data.outcomes)
    r = residuals(m, data.covariates, data.outcomes)
    assert abs(r.mean()) <= 3 * r.std(ddof=1) / np.sqrt(len(r))


def test_logistic_intercept_only_gives_frequencies():
    X = np.ones((100, 2))
    labels = np.array(["a"] * 30 + ["b"] * 70)
    m = fit_classifier(ClassifierSpec("logistic"), X, labels, ("a", "b"))
    assert np.allclose(m.predict_proba(X), [0.3, 0.7], atol=1e-4)


def test_logistic_separated_data():
    X = np.concatenate([np.linspace(-3, -0.5, 20), np.linspace(0.5, 3, 20)])[:, None]
    codes = np.array([0] * 20 + [1] * 20)
    P = LogisticModel(2, l2=1e-3).fit(X, codes).predict_proba(X)
    assert np.all(P[np.arange(40), codes] > 0.5)


def test_logistic_calibration_known_softmax(rng):
    N = 20_000
    X = rng.normal(size=(N, 2))
    W = np.array([[0.5, -1.0], [0.0, 0.8], [-0.7, 0.2]])
    logits = X @ W.T
    P = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    codes = (P.cumsum(1) < rng.random(N)[:, None]).sum(1)
    labels = np.array(["x", "y", "z"])[codes]
    m = fit_classifier(ClassifierSpec("logistic"), X, labels, ("x", "y", "z"))
    freq = np.bincount(codes, minlength=3) / N
    assert np.allclose(m.predict_proba(X).mean(0), freq, atol=0.02)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["logistic", "random_forest"]))
def test_classifier_rows_on_simplex(seed, kind):
    r = np.random.default_rng(seed)
    X = r.normal(size=(60, 3))
    labels = np.array(["a", "b", "c"] * 20)
    spec = ClassifierSpec(kind, {"n_trees": 3} if kind == "random_forest" else {}, seed=seed)
    P = fit_classifier(spec, X, labels, ("a", "b", "c")).predict_proba(r.normal(size=(10, 3)))
    assert np.allclose(P.sum(1), 1.0, atol=1e-12) and np.all(P >= 0)


def test_classifier_missing_class():
    with pytest.raises(LearnerError):
        fit_classifier(ClassifierSpec("logistic"), np.zeros((4, 1)), np.array(["a"] * 4), ("a", "b"))


def test_bad_specs():
    with pytest.raises(LearnerError):
        RegressorSpec("svm")
    with pytest.raises(LearnerError):
        RegressorSpec("lasso", {"lam": -1})
    with pytest.raises(LearnerError):
        RegressorSpec("lasso", {"alpha": 1})


def test_predict_checks_width(rng):
    m = fit_regressor(RegressorSpec("ridge"), rng.normal(size=(10, 2)), rng.normal(size=10))
    with pytest.raises(LearnerError):
        m.predict(np.zeros((3, 5)))


def test_fit_nuisances_uses_train_rows_only():
    data, _ = generate(DgpConfig(N=600, seed=2, assignment="sample"))
    train = np.arange(300)
    fit = fit_nuisances(data, train, RegressorSpec("ridge"), ClassifierSpec("logistic"))
    # perturbing rows outside the training set leaves the fit unchanged
    y2 = data.outcomes.copy()
    y2[300:] += 100.0
    data2 = make_set(y2, data.treatments, data.covariates, data.treatment_space.labels)
    fit2 = fit_nuisances(data2, train, RegressorSpec("ridge"), ClassifierSpec("logistic"))
    assert np.array_equal(fit.g_hat(data.covariates), fit2.g_hat(data.covariates))
    G, P = fit.g_hat(data.covariates), fit.pi_hat(data.covariates)
    assert G.shape == P.shape == (600, 3) and np.allclose(P.sum(1), 1.0)


def test_fit_nuisances_tuning_picks_from_grid():
    data, _ = generate(DgpConfig(N=1000, seed=4, assignment="sample"))
    fit = fit_nuisances(data, np.arange(600), RegressorSpec("lasso"), ClassifierSpec("logistic"),
                        np.arange(600, 800), tune=True)
    assert all(s.params["lam"] in (0.001, 0.01, 0.1, 1.0) for s in fit.regressor_specs)
    assert fit.classifier_spec.params["l2"] in (1e-4, 1e-2)


def test_fit_nuisances_level_without_rows():
    ds = make_set(np.arange(6.0), ["a", "a", "a", "b", "b", "c"], np.arange(6.0)[:, None], ["a", "b", "c"])
    with pytest.raises(ValueError, match="'c'"):
        fit_nuisances(ds, np.arange(6), RegressorSpec("ridge"), ClassifierSpec("logistic"))
