"""CART trees and bagged forests (numpy only).

Regression trees split on the reduction in squared error, classification
trees on Gini impurity. Leaves store the mean outcome or the class
frequency vector.
"""

from __future__ import annotations

import numpy as np


class _Tree:
    def __init__(self, max_depth, min_leaf, max_features, n_classes=None):
        self.max_depth = max_depth
        self.min_leaf = max(1, int(min_leaf))
        self.max_features = max_features
        self.n_classes = n_classes

    # targets: 1-D outcomes (regression) or one-hot rows (classification)
    def _leaf_value(self, target):
        return target.mean(axis=0)

    def _best_split(self, X, target, rows, features):
        n = len(rows)
        best = (np.inf, -1, 0.0)
        if n < 2 * self.min_leaf:
            return best
        lo, hi = self.min_leaf, n - self.min_leaf  # left sizes allowed: lo..hi
        for f in features:
            xs = X[rows, f]
            order = np.argsort(xs, kind="stable")
            xs = xs[order]
            ts = target[rows][order]
            # candidate split after position i-1 (left has i rows)
            valid = np.zeros(n - 1, dtype=bool)
            valid[lo - 1 : hi] = xs[lo:hi + 1] > xs[lo - 1 : hi]
            if not valid.any():
                continue
            nl = np.arange(1, n, dtype=float)
            nr = n - nl
            if self.n_classes is None:
                cs = np.cumsum(ts)[:-1]
                cq = np.cumsum(ts * ts)[:-1]
                tot, totq = cs[-1] + ts[-1], cq[-1] + ts[-1] ** 2
                loss = (cq - cs**2 / nl) + ((totq - cq) - (tot - cs) ** 2 / nr)
            else:
                cc = np.cumsum(ts, axis=0)[:-1]
                tot = cc[-1] + ts[-1]
                loss = (nl - (cc**2).sum(axis=1) / nl) + (nr - ((tot - cc) ** 2).sum(axis=1) / nr)
            loss = np.where(valid, loss, np.inf)
            i = int(np.argmin(loss))
            if loss[i] < best[0]:
                best = (float(loss[i]), int(f), 0.5 * (xs[i] + xs[i + 1]))
        return best

    def fit(self, X, target, rng):
        p = X.shape[1]
        k = p if self.max_features is None else max(1, min(p, int(self.max_features)))
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(rows):
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(self._leaf_value(target[rows]))
            return len(feature) - 1

        root_rows = np.arange(X.shape[0])
        stack = [(new_node(root_rows), root_rows, 0)]
        while stack:
            node, rows, depth = stack.pop()
            if depth >= self.max_depth or len(rows) < 2 * self.min_leaf:
                continue
            feats = np.arange(p) if k == p else np.sort(rng.choice(p, size=k, replace=False))
            loss, f, thr = self._best_split(X, target, rows, feats)
            if f < 0:
                continue
            go_left = X[rows, f] <= thr
            lrows, rrows = rows[go_left], rows[~go_left]
            feature[node], threshold[node] = f, thr
            left[node] = new_node(lrows)
            right[node] = new_node(rrows)
            stack.append((right[node], rrows, depth + 1))
            stack.append((left[node], lrows, depth + 1))
        self.feature = np.array(feature, dtype=int)
        self.threshold = np.array(threshold, dtype=float)
        self.left = np.array(left, dtype=int)
        self.right = np.array(right, dtype=int)
        self.value = np.array(value, dtype=float)
        return self

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            cur = node[idx]
            goes_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(goes_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


class RegressionTree(_Tree):
    def __init__(self, max_depth=8, min_leaf=5, max_features=None):
        super().__init__(max_depth, min_leaf, max_features)


class ClassificationTree(_Tree):
    def __init__(self, n_classes, max_depth=8, min_leaf=5, max_features=None):
        super().__init__(max_depth, min_leaf, max_features, n_classes=n_classes)


def fit_forest(X, target, *, n_trees, max_depth, min_leaf, max_features, seed, n_classes=None, bootstrap=True):
    """Bag ``n_trees`` CART trees; returns the list of fitted trees."""
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    trees = []
    for _ in range(int(n_trees)):
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        if n_classes is None:
            tree = RegressionTree(max_depth, min_leaf, max_features)
        else:
            tree = ClassificationTree(n_classes, max_depth, min_leaf, max_features)
        trees.append(tree.fit(X[rows], target[rows], rng))
    return trees
