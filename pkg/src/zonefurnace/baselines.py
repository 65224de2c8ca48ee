"""Naive-mean, CART and random-forest multi-output regressors."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Layout, Normalizer


@dataclass
class NaiveMean:
    mean: np.ndarray

    @classmethod
    def fit(cls, Y) -> "NaiveMean":
        Y = np.asarray(Y, dtype=float)
        if Y.shape[0] == 0:
            raise ValueError("cannot fit on an empty training set")
        return cls(Y.mean(axis=0))

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.broadcast_to(self.mean, (X.shape[0], self.mean.size)).copy()

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NaiveMean":
        return cls(np.asarray(d["mean"], dtype=float))


@dataclass
class Tree:
    """Array-backed binary tree; ``feature == -1`` marks a leaf. ``x <= threshold`` goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (nodes, outputs) leaf means (node means for inner nodes)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while np.any(active):
            rows = np.flatnonzero(active)
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(), "left": self.left.tolist(),
                "right": self.right.tolist(), "value": self.value.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(np.asarray(d["feature"], dtype=np.int64), np.asarray(d["threshold"], dtype=float),
                   np.asarray(d["left"], dtype=np.int64), np.asarray(d["right"], dtype=np.int64),
                   np.asarray(d["value"], dtype=float).reshape(len(d["feature"]), -1))


def best_split(X, Y, features, min_leaf: int = 1):
    """Exhaustive variance-reduction split over ``features``.

    Maximises |sum_L|^2 / n_L + |sum_R|^2 / n_R summed over outputs, which
    minimises the summed per-output squared error of the two children. Ties go
    to the lowest feature index, then the lowest threshold. Returns
    (feature, threshold, gain) or None when no split reduces the error.
    """
    n = X.shape[0]
    if n < 2 * min_leaf:
        return None
    total = Y.sum(axis=0)
    base = float(total @ total) / n
    best = None
    best_score = -np.inf
    tie = 1e-12
    for f in sorted(features):
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cs = np.cumsum(Y[order], axis=0)[:-1]  # left sums for a split after position i
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        rs = total - cs
        score = np.einsum("ij,ij->i", cs, cs) / nl + np.einsum("ij,ij->i", rs, rs) / (n - nl)
        score = np.where(valid, score, -np.inf)
        # scores equal up to rounding count as ties: first threshold, then first feature
        top = float(score.max())
        i = int(np.flatnonzero(score >= top - tie * abs(top))[0])
        if best is None or score[i] > best_score + tie * abs(best_score):
            best_score = score[i]
            best = (f, 0.5 * (xs[i] + xs[i + 1]), score[i] - base)
    if best is None:
        return None
    tol = 1e-12 * max(float(np.sum(Y * Y)), 1e-300)
    return best if best[2] > tol else None


def cart_fit(X, Y, max_depth: int | None = None, min_leaf: int = 1, feature_frac: float = 1.0,
             rng: np.random.Generator | None = None) -> Tree:
    """Greedy CART on the summed per-output variance.

    With ``feature_frac < 1`` each split considers a random subset of the
    features drawn from ``rng`` (random-forest mode).
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, p = X.shape
    if n < 1 or Y.shape[0] != n:
        raise ValueError("X and Y must have the same positive number of rows")
    if min_leaf < 1:
        raise ValueError("min_leaf must be at least 1")
    if feature_frac < 1.0 and rng is None:
        raise ValueError("feature subsampling needs a random generator")
    n_feat = max(1, int(round(feature_frac * p)))
    feat, thr, left, right, val = [], [], [], [], []

    def new_node(rows):
        feat.append(-1)
        thr.append(0.0)
        left.append(-1)
        right.append(-1)
        val.append(Y[rows].mean(axis=0))
        return len(feat) - 1

    stack = [(new_node(np.arange(n)), np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        features = range(p) if n_feat >= p else rng.choice(p, n_feat, replace=False)
        s = best_split(X[rows], Y[rows], features, min_leaf)
        if s is None:
            continue
        f, t, _ = s
        mask = X[rows, f] <= t
        lrows, rrows = rows[mask], rows[~mask]
        feat[node], thr[node] = f, t
        left[node], right[node] = new_node(lrows), new_node(rrows)
        # right first so the left subtree is numbered first
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(np.asarray(feat, dtype=np.int64), np.asarray(thr), np.asarray(left, dtype=np.int64),
                np.asarray(right, dtype=np.int64), np.vstack(val))


def cart_predict(tree: Tree, X) -> np.ndarray:
    return tree.predict(X)


def training_loss(tree: Tree, X, Y) -> float:
    """Summed squared error of the tree's leaf means on its training data."""
    Y = np.asarray(Y, dtype=float)
    return float(np.sum((tree.predict(X) - Y.reshape(len(Y), -1)) ** 2))


@dataclass
class Forest:
    trees: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, d) -> "Forest":
        return cls([Tree.from_dict(t) for t in d["trees"]])


def _fit_tree(args):
    X, Y, max_depth, min_leaf, feature_frac, bootstrap, seed = args
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, X.shape[0], X.shape[0]) if bootstrap else np.arange(X.shape[0])
    return cart_fit(X[rows], Y[rows], max_depth, min_leaf, feature_frac, rng)


def rf_fit(X, Y, n_trees: int = 20, feature_frac: float = 1.0 / 3.0, seed: int = 0, max_depth: int | None = None,
           min_leaf: int = 1, bootstrap: bool = True, jobs: int = 1) -> Forest:
    """Bagged CART trees with per-split feature subsampling; one independent seed per tree."""
    if n_trees < 1:
        raise ValueError("n_trees must be at least 1")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    seeds = np.random.SeedSequence(seed).spawn(n_trees)
    tasks = [(X, Y, max_depth, min_leaf, feature_frac, bootstrap, s) for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            trees = list(pool.map(_fit_tree, tasks))
    else:
        trees = [_fit_tree(t) for t in tasks]
    return Forest(trees)


def rf_predict(forest: Forest, X) -> np.ndarray:
    return forest.predict(X)


KINDS = ("naive", "dt", "rf")


@dataclass(eq=False)
class BaselineModel:
    """A baseline fitted on normalized data; ``predict`` maps physical X to physical Y."""

    kind: str
    estimator: object
    x_norm: Normalizer
    y_norm: Normalizer
    layout: Layout
    params: dict = field(default_factory=dict)

    @property
    def setting(self) -> int:
        return self.layout.setting

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        Y = self.y_norm.inverse(self.estimator.predict(self.x_norm.transform(np.atleast_2d(X))))
        return Y[0] if single else Y

    def save(self, path) -> None:
        d = {"kind": self.kind, "params": self.params, "layout": self.layout.to_dict(),
             "x_norm": self.x_norm.to_dict(), "y_norm": self.y_norm.to_dict(), "model": self.estimator.to_dict()}
        Path(path).write_text(json.dumps(d))

    @classmethod
    def load(cls, path) -> "BaselineModel":
        d = json.loads(Path(path).read_text())
        est = {"naive": NaiveMean, "dt": Tree, "rf": Forest}[d["kind"]].from_dict(d["model"])
        return cls(d["kind"], est, Normalizer.from_dict(d["x_norm"]), Normalizer.from_dict(d["y_norm"]),
                   Layout(**d["layout"]), d["params"])


def fit_baseline(kind: str, X, Y, layout: Layout, seed: int = 0, max_depth: int | None = 12, min_leaf: int = 5,
                 n_trees: int = 20, feature_frac: float = 1.0 / 3.0, jobs: int = 1) -> BaselineModel:
    """Fit scalers on (X, Y), then the chosen regressor on the scaled data."""
    if kind not in KINDS:
        raise ValueError(f"unknown baseline {kind!r}; expected one of {KINDS}")
    xn, yn = Normalizer.fit(X), Normalizer.fit(Y)
    Xn, Yn = xn.transform(X), yn.transform(Y)
    if kind == "naive":
        est, params = NaiveMean.fit(Yn), {}
    elif kind == "dt":
        params = {"max_depth": max_depth, "min_leaf": min_leaf}
        est = cart_fit(Xn, Yn, max_depth, min_leaf)
    else:
        params = {"max_depth": max_depth, "min_leaf": min_leaf, "n_trees": n_trees, "feature_frac": feature_frac,
                  "seed": seed}
        est = rf_fit(Xn, Yn, n_trees, feature_frac, seed, max_depth, min_leaf, jobs=jobs)
    return BaselineModel(kind, est, xn, yn, layout, params)
