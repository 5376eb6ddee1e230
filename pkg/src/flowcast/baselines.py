"""Classical regressors on flattened windows: least squares, CART regression
trees, gradient boosting and random forests.

Trees are stored as preorder node arrays: ``feature[k] == -1`` marks a leaf
holding ``value[k]``; an internal node's left subtree starts at ``k + 1`` and
its right subtree right after the left one ends.  Samples with
``x[feature] <= threshold`` go left.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from flowcast.errors import ShapeError
from flowcast.numcore import derive_rng

log = logging.getLogger(__name__)

# scores within this relative margin of the best count as ties
_TIE_RTOL = 1e-12


def flatten_window(x) -> np.ndarray:
    """Row-major flattening: day 0 features, then day 1 features, ..."""
    return np.asarray(x, dtype=np.float64).reshape(-1)


def flatten_windows(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X.reshape(len(X), -1)


def _xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2:
        raise ShapeError(f"design matrix must be 2-D, got {X.shape}")
    if len(X) != len(y):
        raise ShapeError(f"{len(X)} rows but {len(y)} targets")
    return X, y


@dataclass
class LinearModel:
    weights: np.ndarray
    intercept: float
    ridge: bool = False

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept


def ols_fit(X, y, ridge: float = 1e-8) -> LinearModel:
    """Least squares with intercept through the normal equations.

    Columns are centred first, which keeps the intercept out of the solve.
    A rank-deficient design is solved with ``ridge`` damping and flagged.
    """
    X, y = _xy(X, y)
    n, p = X.shape
    xm, ym = X.mean(axis=0), y.mean()
    Xc, yc = X - xm, y - ym
    G = Xc.T @ Xc
    rhs = Xc.T @ yc
    flagged = n <= p or np.linalg.matrix_rank(G) < p
    if flagged:
        log.warning("rank-deficient design (%d x %d); using ridge damping %g", n, p, ridge)
        G = G + ridge * np.eye(p)
    w = np.linalg.solve(G, rhs)
    return LinearModel(w, float(ym - xm @ w), flagged)


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    max_depth: int | None = None
    min_samples_leaf: int = 1

    def __post_init__(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.value = np.asarray(self.value, dtype=np.float64)
        self._link()

    def _link(self):
        n = len(self.feature)
        self.left = np.full(n, -1, dtype=np.int64)
        self.right = np.full(n, -1, dtype=np.int64)

        def walk(k):
            if k >= n:
                raise ShapeError("truncated preorder node list")
            if self.feature[k] < 0:
                return k + 1
            self.left[k] = k + 1
            nxt = walk(k + 1)
            self.right[k] = nxt
            return walk(nxt)

        if walk(0) != n:
            raise ShapeError("preorder node list has trailing nodes")

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=np.float64)
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, k = rows[active], node[active]
            go_left = X[r, self.feature[k]] <= self.threshold[k]
            node[r] = np.where(go_left, self.left[k], self.right[k])
            active = self.feature[node] >= 0
        return node

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def best_split(X, y, min_samples_leaf: int = 1, features=None):
    """Greedy squared-error split.

    Returns ``(feature, threshold, sse)`` or ``None`` when no split leaves at
    least ``min_samples_leaf`` rows on each side.  Thresholds are midpoints
    between consecutive distinct values; ties go to the lowest feature index,
    then the lowest threshold.
    """
    m, p = X.shape
    if m < 2 * min_samples_leaf:
        return None
    cols = np.arange(p) if features is None else np.sort(np.asarray(features))
    if m == 2:
        # every valid split of two rows leaves zero error, so the lowest usable feature wins
        for f in cols:
            a, b = X[0, f], X[1, f]
            if a != b:
                lo, hi = (a, b) if a < b else (b, a)
                thr = 0.5 * (lo + hi)
                return int(f), float(thr if lo <= thr < hi else lo), 0.0
        return None
    Xs_all = X[:, cols]
    order = np.argsort(Xs_all, axis=0, kind="stable")
    xs = Xs_all[order, np.arange(len(cols))]
    yc = y - y.mean()
    ys = yc[order]
    s = np.cumsum(ys, axis=0)[:-1]
    s2 = np.cumsum(ys * ys, axis=0)[:-1]
    tot, tot2 = yc.sum(), (yc * yc).sum()
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    sse = (s2 - s * s / n_left) + ((tot2 - s2) - (tot - s) ** 2 / n_right)
    valid = xs[1:] > xs[:-1]
    valid[: min_samples_leaf - 1] = False
    valid[m - min_samples_leaf:] = False
    if not valid.any():
        return None
    sse = np.where(valid, np.maximum(sse, 0.0), np.inf)
    best = sse.min()
    # feature-major scan so the first hit has the lowest feature, then the lowest threshold
    tied = (sse <= best + _TIE_RTOL * max(best, tot2)).T
    f_pos, i = np.unravel_index(np.argmax(tied), tied.shape)
    lo, hi = xs[i, f_pos], xs[i + 1, f_pos]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return int(cols[f_pos]), float(thr), float(sse[i, f_pos])


def tree_fit(X, y, max_depth: int | None = None, min_samples_leaf: int = 1,
             max_features: int | None = None, rng: np.random.Generator | None = None) -> RegressionTree:
    """CART regression tree grown depth-first.

    A node splits while it is impure, shallower than ``max_depth`` and some
    split keeps ``min_samples_leaf`` rows per side.  With ``max_features < p``
    each node draws its candidate features from ``rng``.
    """
    X, y = _xy(X, y)
    if len(y) == 0:
        raise ValueError("tree_fit needs at least one sample")
    if min_samples_leaf < 1:
        raise ValueError("min_samples_leaf must be >= 1")
    p = X.shape[1]
    if max_features is not None and max_features < p and rng is None:
        raise ValueError("feature subsampling needs an rng")
    feature, threshold, value = [], [], []

    def grow(idx, depth):
        k = len(feature)
        yi = y[idx]
        feature.append(-1)
        threshold.append(0.0)
        value.append(float(yi.mean()))
        if max_depth is not None and depth >= max_depth:
            return
        if len(idx) < 2 or np.all(yi == yi[0]):
            return
        feats = None
        if max_features is not None and max_features < p:
            feats = rng.choice(p, size=max_features, replace=False)
        split = best_split(X[idx], yi, min_samples_leaf, feats)
        if split is None:
            return
        f, thr, _ = split
        mask = X[idx, f] <= thr
        feature[k], threshold[k] = f, thr
        grow(idx[mask], depth + 1)
        grow(idx[~mask], depth + 1)

    grow(np.arange(len(y)), 0)
    return RegressionTree(feature, threshold, value, max_depth, min_samples_leaf)


@dataclass
class Ensemble:
    """``gbr``: initial + learning_rate * sum(tree outputs); ``rf``: mean of trees."""

    kind: str
    trees: list = field(default_factory=list)
    learning_rate: float = 0.1
    initial_prediction: float = 0.0
    seed: int = 0
    max_features: int | None = None

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "gbr":
            out = np.full(len(X), self.initial_prediction)
            for t in self.trees:
                out += self.learning_rate * t.predict(X)
            return out
        if self.kind == "rf":
            if not self.trees:
                raise ValueError("empty forest")
            return np.mean([t.predict(X) for t in self.trees], axis=0)
        raise ValueError(f"unknown ensemble kind {self.kind!r}")

    def staged_predict(self, X):
        """GBR predictions after each stage, starting with the initial constant."""
        if self.kind != "gbr":
            raise ValueError("staged_predict is defined for gbr only")
        out = np.full(len(X), self.initial_prediction)
        yield out.copy()
        for t in self.trees:
            out = out + self.learning_rate * t.predict(X)
            yield out.copy()

    def to_tensors(self) -> dict:
        tensors = {}
        for n, t in enumerate(self.trees):
            tensors[f"tree{n}.feature"] = t.feature.astype(np.float64)
            tensors[f"tree{n}.threshold"] = t.threshold
            tensors[f"tree{n}.value"] = t.value
        return tensors

    def to_meta(self) -> dict:
        return {
            "ensemble": self.kind,
            "n_trees": len(self.trees),
            "learning_rate": repr(self.learning_rate),
            "initial_prediction": repr(self.initial_prediction),
            "ensemble_seed": self.seed,
        }

    @classmethod
    def from_records(cls, meta: dict, tensors: dict) -> "Ensemble":
        trees = [
            RegressionTree(tensors[f"tree{n}.feature"].astype(np.int64),
                           tensors[f"tree{n}.threshold"], tensors[f"tree{n}.value"])
            for n in range(int(meta["n_trees"]))
        ]
        return cls(meta["ensemble"], trees, float(meta["learning_rate"]),
                   float(meta["initial_prediction"]), int(meta.get("ensemble_seed", 0)))


def gbr_fit(X, y, n_trees: int = 100, lr: float = 0.1, max_depth: int = 3,
            min_samples_leaf: int = 1) -> Ensemble:
    """Least-squares boosting from the mean; each stage fits the residuals."""
    X, y = _xy(X, y)
    if len(y) < 2:
        raise ValueError("gbr_fit needs at least 2 samples")
    init = float(y.mean())
    pred = np.full(len(y), init)
    trees = []
    for _ in range(n_trees):
        tree = tree_fit(X, y - pred, max_depth=max_depth, min_samples_leaf=min_samples_leaf)
        pred = pred + lr * tree.predict(X)
        trees.append(tree)
    return Ensemble("gbr", trees, lr, init)


def rf_fit(X, y, n_trees: int = 100, max_features: int | None = None, bootstrap: bool = True,
           seed: int = 0, max_depth: int | None = None, min_samples_leaf: int = 1) -> Ensemble:
    """Bagged CART trees; tree ``t`` draws from ``derive_rng(seed, t)``."""
    X, y = _xy(X, y)
    n, p = X.shape
    if n < 2:
        raise ValueError("rf_fit needs at least 2 samples")
    if n_trees < 1:
        raise ValueError("a forest needs at least one tree")
    trees = []
    for t in range(n_trees):
        rng = derive_rng(seed, t)
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(tree_fit(X[idx], y[idx], max_depth, min_samples_leaf,
                              max_features if max_features is not None else p, rng))
    return Ensemble("rf", trees, seed=seed, max_features=max_features)
