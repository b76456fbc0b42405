"""Random-forest regression: parameter types, trees, forests, prediction."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from ..errors import ConfigError, DimensionMismatch, EmptyInput, NonFiniteInput
from . import _kernels as K

MASK64 = (1 << 64) - 1

MaxFeatures = Union[str, float]


def seed_key(seed: int) -> np.uint64:
    return np.uint64(int(seed) & MASK64)


def derive_seed(seed: int, index: int) -> int:
    """Child seed for parallel unit ``index`` (tree, target, fold, ...)."""
    return int(K.derive(seed_key(seed), np.uint64(int(index) & MASK64)))


def normalize_max_features(value: MaxFeatures) -> MaxFeatures:
    if isinstance(value, str):
        v = value.lower()
        if v in ("auto", "all", "none"):
            return "all"
        if v == "sqrt":
            return "sqrt"
        raise ConfigError(f"unknown max_features {value!r}")
    f = float(value)
    if not 0.0 < f <= 1.0:
        raise ConfigError(f"max_features fraction must be in (0, 1], got {value}")
    return f


def resolve_max_features(value: MaxFeatures, n_features: int) -> int:
    value = normalize_max_features(value)
    if value == "all":
        return n_features
    if value == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    return max(1, min(n_features, int(value * n_features)))


@dataclass(frozen=True)
class TreeParams:
    max_depth: int = 10
    min_samples_leaf: int = 1
    max_features: MaxFeatures = "all"
    bootstrap_fraction: float = 1.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ConfigError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not 0.0 < self.bootstrap_fraction <= 1.0:
            raise ConfigError("bootstrap_fraction must be in (0, 1]")
        object.__setattr__(self, "max_features", normalize_max_features(self.max_features))

    def to_dict(self):
        return {
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "max_features": self.max_features,
            "bootstrap_fraction": self.bootstrap_fraction,
        }


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 200
    tree: TreeParams = field(default_factory=TreeParams)
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError("n_estimators must be >= 1")

    def with_seed(self, seed: int) -> "ForestParams":
        return replace(self, seed=seed)

    def to_dict(self):
        return {"n_estimators": self.n_estimators, "seed": self.seed, "tree": self.tree.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "ForestParams":
        return cls(int(d["n_estimators"]), TreeParams(**d["tree"]), int(d["seed"]))


def _check_xy(X, y):
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyInput(f"X must be a non-empty n x d matrix, got shape {X.shape}")
    if y.shape != (X.shape[0],):
        raise DimensionMismatch(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise NonFiniteInput("X and y must be finite")
    return X, y


def _check_query(X, n_features):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :] if n_features > 1 or X.shape[0] == 1 else X[:, None]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise DimensionMismatch(f"query has {X.shape[-1]} features, model expects {n_features}")
    return X


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Array-encoded binary tree; ``left == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    depth: np.ndarray
    n_features: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left < 0))

    @property
    def max_depth_reached(self) -> int:
        return int(self.depth.max())

    def predict(self, X) -> np.ndarray:
        X = _check_query(X, self.n_features)
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        return K.predict_trees(self.feature, self.threshold, self.left, self.right,
                               self.value, self.depth, offsets, X, np.iinfo(np.int64).max)[0]


def _grow(X, y, rows2d, keys, tree: TreeParams):
    n_feat = resolve_max_features(tree.max_features, X.shape[1])
    return K.grow_many(X, y, np.ascontiguousarray(rows2d, dtype=np.int64),
                       np.ascontiguousarray(keys, dtype=np.uint64),
                       tree.max_depth, tree.min_samples_leaf, n_feat)


def fit_tree(X, y, params: TreeParams, seed: int = 0) -> RegressionTree:
    """Grow one CART regression tree on all rows (no resampling)."""
    X, y = _check_xy(X, y)
    rows = np.arange(X.shape[0], dtype=np.int64)[None, :]
    keys = np.array([seed_key(seed)], dtype=np.uint64)
    f, t, l, r, v, c, d, _ = _grow(X, y, rows, keys, params)
    return RegressionTree(f, t, l, r, v, c, d, X.shape[1])


@dataclass(frozen=True, eq=False)
class Forest:
    params: ForestParams
    n_features: int
    y_min: float
    y_max: float
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    depth: np.ndarray
    offsets: np.ndarray

    @property
    def n_trees(self) -> int:
        return len(self.offsets) - 1

    @property
    def trees(self) -> list:
        out = []
        for t in range(self.n_trees):
            a, b = self.offsets[t], self.offsets[t + 1]
            out.append(RegressionTree(self.feature[a:b], self.threshold[a:b], self.left[a:b],
                                      self.right[a:b], self.value[a:b], self.count[a:b],
                                      self.depth[a:b], self.n_features))
        return out

    def tree_predictions(self, X, depth_cap: Optional[int] = None) -> np.ndarray:
        X = _check_query(X, self.n_features)
        cap = np.iinfo(np.int64).max if depth_cap is None else int(depth_cap)
        return K.predict_trees(self.feature, self.threshold, self.left, self.right,
                               self.value, self.depth, self.offsets, X, cap)

    def predict(self, X) -> np.ndarray:
        return predict(self, X)

    def split_counts(self) -> np.ndarray:
        """Number of splits on each feature across all trees."""
        used = self.feature[self.feature >= 0]
        return np.bincount(used, minlength=self.n_features)


def average_trees(per_tree: np.ndarray, n: int, y_min: float, y_max: float) -> np.ndarray:
    """Mean of the first ``n`` tree outputs, summed in tree order."""
    total = np.cumsum(per_tree[:n], axis=0)[n - 1]
    return np.clip(total / n, y_min, y_max)


def predict(forest: Forest, X) -> np.ndarray:
    """Per-row mean of tree predictions, always inside the training y-range."""
    per_tree = forest.tree_predictions(X)
    return average_trees(per_tree, forest.n_trees, forest.y_min, forest.y_max)


def _chunks(n, parts):
    parts = max(1, min(parts, n))
    edges = np.linspace(0, n, parts + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def fit_forest(X, y, params: ForestParams, n_jobs: int = 1, rows=None) -> Forest:
    """Bagged CART forest.

    Tree ``t`` trains on ceil(bootstrap_fraction * n) rows drawn with
    replacement from a generator keyed on (seed, t).  ``rows`` overrides the
    bootstrap draw with an explicit (n_trees, n_boot) index matrix.
    """
    X, y = _check_xy(X, y)
    n = X.shape[0]
    T = params.n_estimators
    fkey = seed_key(params.seed)
    n_boot = max(1, math.ceil(params.tree.bootstrap_fraction * n))
    keys = K.tree_keys(fkey, 0, T)
    if rows is None:
        rows = K.bootstrap_rows(n, n_boot, fkey, 0, T)
    else:
        rows = np.ascontiguousarray(rows, dtype=np.int64)
        if rows.shape[0] != T:
            raise DimensionMismatch("explicit rows must have one line per tree")

    def work(span):
        a, b = span
        return _grow(X, y, rows[a:b], keys[a:b], params.tree)

    spans = _chunks(T, n_jobs)
    if len(spans) == 1:
        parts = [work(spans[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(spans)) as ex:
            parts = list(ex.map(work, spans))
    arrays = [np.concatenate([p[i] for p in parts]) for i in range(7)]
    offsets = [np.zeros(1, dtype=np.int64)]
    shift = 0
    for p in parts:
        offsets.append(p[7][1:] + shift)
        shift += p[7][-1]
    offsets = np.concatenate(offsets)
    return Forest(params, X.shape[1], float(y.min()), float(y.max()), *arrays, offsets)


@dataclass(frozen=True, eq=False)
class MultiTargetForest:
    """Independent forests, one per target column."""

    forests: tuple
    n_features: int

    @property
    def n_targets(self) -> int:
        return len(self.forests)

    def predict(self, X) -> np.ndarray:
        X = _check_query(X, self.n_features)
        return np.column_stack([predict(f, X) for f in self.forests])


def fit_multi_target(X, Y, params: ForestParams, n_jobs: int = 1,
                     derive_seeds: bool = True) -> MultiTargetForest:
    """One forest per column of ``Y``; target ``c`` uses seed derive(seed, c).

    ``derive_seeds=False`` gives every target ``params.seed`` (test hook).
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    forests = []
    for c in range(Y.shape[1]):
        seed = derive_seed(params.seed, c) if derive_seeds else params.seed
        forests.append(fit_forest(X, Y[:, c], params.with_seed(seed), n_jobs=n_jobs))
    Xc = np.asarray(X)
    d = 1 if Xc.ndim == 1 else Xc.shape[1]
    return MultiTargetForest(tuple(forests), d)
