"""Bagged Gini decision trees and the validation-set grid search over them.

Tree ``t`` of a forest draws its bootstrap sample and its per-node feature
subsets from ``default_rng([seed, t])``, so a forest of 200 trees starts
with exactly the 100 trees of the same-seed forest of 100.  The grid search
relies on this to evaluate every tree count from one fit per depth.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SingleClass, TooFewRows, ValidationError

MODEL_VERSION = 1


@dataclass(eq=False)
class DecisionTree:
    feature: np.ndarray       # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    class_counts: np.ndarray  # n_nodes x n_classes
    max_depth: int | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, x) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.intp)
        active = np.flatnonzero(self.feature[node] >= 0)
        while active.size:
            nd = node[active]
            go_left = x[active, self.feature[nd]] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = active[self.feature[node[active]] >= 0]
        return node

    def predict_proba(self, x) -> np.ndarray:
        counts = self.class_counts[self.apply(x)]
        return counts / counts.sum(axis=1, keepdims=True)

    def structure(self):
        """Split structure as comparable tuples (feature, threshold, left, right)."""
        return list(zip(self.feature.tolist(), self.threshold.tolist(),
                        self.left.tolist(), self.right.tolist()))

    def to_dict(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "class_counts": self.class_counts.tolist(), "max_depth": self.max_depth}

    @classmethod
    def from_dict(cls, d) -> "DecisionTree":
        return cls(np.array(d["feature"], dtype=np.intp),
                   np.array(d["threshold"], dtype=np.float64),
                   np.array(d["left"], dtype=np.intp), np.array(d["right"], dtype=np.intp),
                   np.array(d["class_counts"], dtype=np.float64), d["max_depth"])


def _gini_split(xs, ys_onehot, parent_counts):
    """Best split over the candidate columns of ``xs`` (k x m).

    Returns ``(column, threshold)`` or ``None`` when every column is
    constant.  Ties go to the lowest column, then the lowest threshold.
    """
    k, m = xs.shape
    order = np.argsort(xs, axis=0, kind="stable")
    sorted_x = np.take_along_axis(xs, order, axis=0)
    # left class counts after each position: (k-1) x m x n_classes
    left = np.cumsum(ys_onehot[order], axis=0)[:-1]
    right = parent_counts[None, None, :] - left
    n_left = np.arange(1, k, dtype=np.float64)[:, None]
    n_right = k - n_left
    gini_left = 1.0 - np.sum(left * left, axis=2) / (n_left * n_left)
    gini_right = 1.0 - np.sum(right * right, axis=2) / (n_right * n_right)
    impurity = (n_left * gini_left + n_right * gini_right) / k
    valid = sorted_x[1:] > sorted_x[:-1]
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    # column-major flattening: lowest column first, then lowest position
    flat = np.argmin(impurity.T.reshape(-1))
    col, pos = divmod(int(flat), k - 1)
    lo, hi = sorted_x[pos, col], sorted_x[pos + 1, col]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return col, float(thr)


def build_tree(x, y, sample_indices, n_classes: int, rng: np.random.Generator,
               max_depth: int | None = None, max_features: int | None = None) -> DecisionTree:
    """Grow one Gini tree on ``x[sample_indices]``.

    ``y`` holds class indices ``0..n_classes-1``.  Nodes stop splitting at
    ``max_depth``, when pure, or with fewer than 2 samples.  At each node
    ``max_features`` candidate columns are drawn without replacement.
    """
    n_features = x.shape[1]
    m = n_features if max_features is None else min(max_features, n_features)
    onehot = np.eye(n_classes)[y]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(onehot[idx].sum(axis=0))
        return len(feature) - 1

    root = new_node(np.asarray(sample_indices, dtype=np.intp))
    stack = [(root, np.asarray(sample_indices, dtype=np.intp), 0)]
    while stack:
        node, idx, depth = stack.pop()
        node_counts = counts[node]
        if (max_depth is not None and depth >= max_depth) or idx.size < 2 \
                or np.count_nonzero(node_counts) <= 1:
            continue
        cand = np.sort(rng.choice(n_features, size=m, replace=False))
        best = _gini_split(x[np.ix_(idx, cand)], onehot[idx], node_counts)
        if best is None:
            continue
        col, thr = best
        f = int(cand[col])
        go_left = x[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        # right pushed first so the left subtree is numbered first
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(np.array(feature, dtype=np.intp), np.array(threshold),
                        np.array(left, dtype=np.intp), np.array(right, dtype=np.intp),
                        np.array(counts, dtype=np.float64), max_depth)


@dataclass(eq=False)
class RandomForestModel:
    trees: list
    classes: np.ndarray
    n_features: int
    max_depth: int | None
    features_per_split: int
    seed: int

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    def truncated(self, n_estimators: int) -> "RandomForestModel":
        """The same-seed forest with only the first ``n_estimators`` trees."""
        if not 1 <= n_estimators <= self.n_estimators:
            raise ValidationError(f"cannot truncate {self.n_estimators} trees to {n_estimators}")
        return RandomForestModel(self.trees[:n_estimators], self.classes, self.n_features,
                                 self.max_depth, self.features_per_split, self.seed)

    def predict_proba(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {x.shape[1]}")
        total = np.zeros((x.shape[0], len(self.classes)))
        for tree in self.trees:
            total += tree.predict_proba(x)
        return total / len(self.trees)

    def predict(self, x) -> np.ndarray:
        # argmax returns the first maximum, i.e. the smallest class label
        return self.classes[np.argmax(self.predict_proba(x), axis=1)]

    def to_dict(self) -> dict:
        return {"format": "random_forest", "version": MODEL_VERSION,
                "classes": self.classes.tolist(), "n_features": self.n_features,
                "max_depth": self.max_depth, "features_per_split": self.features_per_split,
                "seed": self.seed, "trees": [t.to_dict() for t in self.trees]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "RandomForestModel":
        if d.get("format") != "random_forest" or d.get("version") != MODEL_VERSION:
            raise ValidationError("not a version-1 forest")
        return cls([DecisionTree.from_dict(t) for t in d["trees"]], np.array(d["classes"]),
                   d["n_features"], d["max_depth"], d["features_per_split"], d["seed"])

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "RandomForestModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_forest(x, y, n_estimators: int = 100, max_depth: int | None = None, seed: int = 0,
               features_per_split: int | None = None) -> RandomForestModel:
    """Fit ``n_estimators`` bootstrapped Gini trees.

    ``features_per_split`` defaults to ceil(sqrt(N)).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch("x must be n x N with one label per row")
    if x.shape[0] < 2:
        raise TooFewRows("need at least 2 rows")
    classes, y_idx = np.unique(y, return_inverse=True)
    if len(classes) < 2:
        raise SingleClass("need at least 2 classes")
    if n_estimators < 1:
        raise ValidationError("n_estimators must be positive")
    m = features_per_split or math.ceil(math.sqrt(x.shape[1]))
    n = x.shape[0]
    trees = []
    for t in range(n_estimators):
        rng = np.random.default_rng([seed, t])
        boot = rng.integers(0, n, size=n)
        trees.append(build_tree(x, y_idx, boot, len(classes), rng, max_depth, m))
    return RandomForestModel(trees, classes, x.shape[1], max_depth, m, seed)


def predict_forest(model: RandomForestModel, x):
    """``(class, probabilities)`` for one row, or arrays of both for a batch."""
    x = np.asarray(x, dtype=np.float64)
    proba = model.predict_proba(x)
    labels = model.classes[np.argmax(proba, axis=1)]
    if x.ndim == 1:
        return labels[0], proba[0]
    return labels, proba


@dataclass
class GridSpec:
    n_estimators_values: list = field(default_factory=lambda: [100, 200, 400])
    max_depth_values: list = field(default_factory=lambda: [4, 8, 16, None])
    selection_metric: str = "MACRO_F1"

    def __post_init__(self):
        if not self.n_estimators_values or not self.max_depth_values:
            raise ValidationError("grid axes must be non-empty")
        if self.selection_metric.upper() != "MACRO_F1":
            raise ValidationError("only MACRO_F1 selection is supported")

    @classmethod
    def full(cls) -> "GridSpec":
        """n_estimators = 10 i for 50 <= i <= 500; depth = 2 i for 1 <= i <= 20."""
        return cls([10 * i for i in range(50, 501)], [2 * i for i in range(1, 21)])

    def points(self):
        return [(n, d) for n in self.n_estimators_values for d in self.max_depth_values]


def _depth_key(depth):
    return math.inf if depth is None else depth


def grid_search(train_x, train_y, val_x, val_y, grid: GridSpec | None = None, seed: int = 0):
    """Score every grid point by validation macro-F1.

    Returns ``(best, table)`` where ``best`` is ``{"n_estimators", "max_depth",
    "macro_f1"}`` and ``table`` lists every point.  Ties prefer fewer trees,
    then shallower depth.
    """
    from .evaluation import f1_binary

    grid = grid or GridSpec()
    max_trees = max(grid.n_estimators_values)
    labels = sorted(set(np.asarray(train_y).tolist()) | set(np.asarray(val_y).tolist()))
    table = []
    for depth in sorted(set(grid.max_depth_values), key=_depth_key):
        full = fit_forest(train_x, train_y, max_trees, depth, seed)
        for n_est in sorted(set(grid.n_estimators_values)):
            preds = full.truncated(n_est).predict(val_x)
            score = f1_binary(preds, val_y, "MACRO", labels=labels).score
            table.append({"n_estimators": n_est, "max_depth": depth, "macro_f1": score})
    table.sort(key=lambda r: (r["n_estimators"], _depth_key(r["max_depth"])))
    best = max(table, key=lambda r: (r["macro_f1"], -r["n_estimators"],
                                     -_depth_key(r["max_depth"])))
    return dict(best), table


def write_score_table(path, table) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n_estimators", "max_depth", "macro_f1"])
        for r in table:
            depth = "" if r["max_depth"] is None else r["max_depth"]
            writer.writerow([r["n_estimators"], depth, repr(float(r["macro_f1"]))])
