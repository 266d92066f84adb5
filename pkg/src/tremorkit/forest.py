"""Random-forest classifier over the hand-crafted feature vectors.

Each tree grows on a bootstrap sample with sqrt(d) feature subsampling and
Gini-impurity splits; leaves hold class distributions and the forest
prediction is their average. Everything is deterministic given the seed:
Gini ties break on the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .dataset import MERGED_CLASSES

SCHEMA_VERSION = 1


class DegenerateData(ValueError):
    pass


class FeatureMismatch(ValueError):
    pass


@dataclass
class ForestConfig:
    n_trees: int = 200
    max_depth: int = 12
    min_leaf: int = 2
    n_classes: int = MERGED_CLASSES


@dataclass
class DecisionTree:
    """Array-encoded binary tree; internal nodes split, leaves hold
    class distributions (rows sum to 1)."""
    feature: list[int] = field(default_factory=list)      # -1 at leaves
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    dist: list[list[float]] = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.dist.append([])
        return len(self.feature) - 1

    def leaf_distribution(self, x: np.ndarray) -> np.ndarray:
        node = 0
        while self.feature[node] >= 0:
            node = self.left[node] if x[self.feature[node]] <= self.threshold[node] \
                else self.right[node]
        return np.asarray(self.dist[node])


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    n_classes: int
    n_features: int
    seed: int

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_classes": self.n_classes,
            "n_features": self.n_features,
            "seed": self.seed,
            "trees": [{"feature": t.feature, "threshold": t.threshold,
                       "left": t.left, "right": t.right, "dist": t.dist}
                      for t in self.trees],
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path):
        obj = json.loads(Path(path).read_text())
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported forest schema {obj.get('schema_version')}")
        trees = [DecisionTree(feature=t["feature"], threshold=t["threshold"],
                              left=t["left"], right=t["right"], dist=t["dist"])
                 for t in obj["trees"]]
        return cls(trees=trees, n_classes=obj["n_classes"],
                   n_features=obj["n_features"], seed=obj["seed"])


def _gini_best_split(X, y, feat_indices, n_classes, min_leaf):
    """Best (feature, threshold, weighted child Gini) over candidate features.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values; a split is valid only if both children keep >= min_leaf rows.
    """
    n = len(y)
    best = None   # (gini, feature, threshold)
    for f in feat_indices:
        vals = X[:, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        sy = y[order]
        # one-hot cumulative class counts below each cut position
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), sy] = 1.0
        cum = np.cumsum(onehot, axis=0)
        total = cum[-1]

        cuts = np.nonzero(np.diff(sv) > 0)[0]     # split between i and i+1
        if cuts.size == 0:
            continue
        n_left = cuts + 1
        n_right = n - n_left
        valid = (n_left >= min_leaf) & (n_right >= min_leaf)
        if not valid.any():
            continue
        cuts = cuts[valid]
        n_left = n_left[valid]
        n_right = n_right[valid]
        left_counts = cum[cuts]
        right_counts = total[None, :] - left_counts
        gini_l = 1.0 - ((left_counts / n_left[:, None]) ** 2).sum(axis=1)
        gini_r = 1.0 - ((right_counts / n_right[:, None]) ** 2).sum(axis=1)
        weighted = (n_left * gini_l + n_right * gini_r) / n

        j = int(np.argmin(weighted))     # first occurrence = lowest threshold
        thr = (sv[cuts[j]] + sv[cuts[j] + 1]) / 2.0
        cand = (float(weighted[j]), int(f), float(thr))
        if best is None or cand[0] < best[0] - 1e-15 or \
                (abs(cand[0] - best[0]) <= 1e-15 and (cand[1], cand[2]) < (best[1], best[2])):
            best = cand
    return best


def _class_distribution(y, n_classes) -> list[float]:
    counts = np.bincount(y, minlength=n_classes).astype(np.float64)
    return (counts / counts.sum()).tolist()


def _grow_tree(X, y, config: ForestConfig, rng) -> DecisionTree:
    tree = DecisionTree()
    d = X.shape[1]
    n_sub = max(1, int(math.sqrt(d)))
    stack = [(tree.add_node(), np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        sub_y = y[idx]
        if depth >= config.max_depth or len(idx) < 2 * config.min_leaf \
                or len(np.unique(sub_y)) == 1:
            tree.dist[node] = _class_distribution(sub_y, config.n_classes)
            continue
        feats = np.sort(rng.choice(d, size=min(n_sub, d), replace=False))
        best = _gini_best_split(X[idx], sub_y, feats, config.n_classes, config.min_leaf)
        if best is None:
            tree.dist[node] = _class_distribution(sub_y, config.n_classes)
            continue
        _, f, thr = best
        mask = X[idx, f] <= thr
        left = tree.add_node()
        right = tree.add_node()
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = left
        tree.right[node] = right
        stack.append((right, idx[~mask], depth + 1))
        stack.append((left, idx[mask], depth + 1))
    return tree


def fit(features, labels, config: ForestConfig | None = None, seed: int = 0) -> ForestModel:
    """Train the forest on feature rows and merged class labels."""
    config = config or ForestConfig()
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features must be (n, d) matching labels")
    if len(np.unique(y)) < 2:
        raise DegenerateData("training data contains a single class")

    trees = []
    n = len(y)
    for t in range(config.n_trees):
        rng = rngmod.substream(seed, "tree", t)
        boot = rng.integers(0, n, size=n)
        trees.append(_grow_tree(X[boot], y[boot], config, rng))
    return ForestModel(trees=trees, n_classes=config.n_classes,
                       n_features=X.shape[1], seed=seed)


def predict_proba(model: ForestModel, features) -> np.ndarray:
    """Mean of leaf class distributions across trees; rows sum to 1."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != model.n_features:
        raise FeatureMismatch(f"model expects {model.n_features} features, "
                              f"got {X.shape[1]}")
    out = np.zeros((len(X), model.n_classes))
    for i, x in enumerate(X):
        acc = np.zeros(model.n_classes)
        for tree in model.trees:
            acc += tree.leaf_distribution(x)
        out[i] = acc / len(model.trees)
    return out


def predict(model: ForestModel, features) -> np.ndarray:
    return np.argmax(predict_proba(model, features), axis=1)
