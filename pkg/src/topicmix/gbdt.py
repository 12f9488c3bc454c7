"""Gradient-boosted regression trees with exact greedy splits.

Squared loss only. Tree fitting scans every (feature, threshold) split
exactly (no histograms), which is plenty fast at the few-hundred-trial
scale this toolkit fits surrogates on; prediction is vectorized over
samples so scoring 100k candidates stays cheap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError

MIN_GAIN = 1e-12


@dataclass
class _Tree:
    feature: np.ndarray    # (nodes,) int32, -1 for leaves
    threshold: np.ndarray  # (nodes,) float64
    left: np.ndarray       # (nodes,) int32
    right: np.ndarray      # (nodes,) int32
    value: np.ndarray      # (nodes,) float64

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int32)
        rows = np.arange(len(X))
        depth = 0
        while True:
            feats = self.feature[node]
            active = feats >= 0
            if not np.any(active):
                break
            go_left = X[rows, np.maximum(feats, 0)] <= self.threshold[node]
            step = np.where(go_left, self.left[node], self.right[node])
            node = np.where(active, step, node)
            depth += 1
            if depth > 64:  # trees are depth-bounded; this is a corruption guard
                raise DataError("tree traversal did not terminate")
        return self.value[node]


def _best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray) -> tuple[int, float, float] | None:
    """Best (feature, threshold, gain) for the samples in idx, or None."""
    n = idx.size
    y_node = y[idx]
    total = y_node.sum()
    base = total * total / n
    best_gain = MIN_GAIN
    best: tuple[int, float, float] | None = None
    for f in range(X.shape[1]):
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        v_sorted = vals[order]
        y_sorted = y_node[order]
        csum = np.cumsum(y_sorted)
        # split after position i puts i+1 samples on the left
        counts = np.arange(1, n, dtype=np.float64)
        left_sum = csum[:-1]
        right_sum = total - left_sum
        gains = left_sum**2 / counts + right_sum**2 / (n - counts) - base
        valid = v_sorted[:-1] < v_sorted[1:]
        if not np.any(valid):
            continue
        gains = np.where(valid, gains, -np.inf)
        pos = int(np.argmax(gains))
        if gains[pos] > best_gain:
            best_gain = float(gains[pos])
            threshold = 0.5 * (v_sorted[pos] + v_sorted[pos + 1])
            best = (f, float(threshold), best_gain)
    return best


def _fit_tree(X: np.ndarray, y: np.ndarray, idx: np.ndarray, max_depth: int) -> _Tree:
    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []

    def build(samples: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[samples].mean()))
        if depth >= max_depth or samples.size < 2:
            return node
        split = _best_split(X, y, samples)
        if split is None:
            return node
        f, thr, _ = split
        mask = X[samples, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = build(samples[mask], depth + 1)
        right[node] = build(samples[~mask], depth + 1)
        return node

    build(idx, 0)
    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
    )


class GradientBoostedTrees:
    """Boosted regression trees trained on squared loss."""

    def __init__(
        self,
        n_trees: int = 500,
        max_depth: int = 3,
        learning_rate: float = 0.05,
        subsample: float = 0.8,
        seed: int = 0,
    ):
        if n_trees < 1 or max_depth < 1:
            raise DataError("n_trees and max_depth must be >= 1")
        if not (0.0 < subsample <= 1.0):
            raise DataError("subsample must be in (0, 1]")
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.learning_rate = learning_rate
        self.subsample = subsample
        self.seed = seed
        self.init_: float = 0.0
        self.trees_: list[_Tree] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoostedTrees":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise DataError("X must be (n, d) and y (n,)")
        n = X.shape[0]
        rng = np.random.default_rng(self.seed)
        self.init_ = float(y.mean())
        self.trees_ = []
        current = np.full(n, self.init_)
        take = max(1, int(round(self.subsample * n)))
        for _ in range(self.n_trees):
            residual = y - current
            idx = rng.choice(n, size=take, replace=False) if take < n else np.arange(n)
            tree = _fit_tree(X, residual, idx, self.max_depth)
            current = current + self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.full(len(X), self.init_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(X)
        return out
