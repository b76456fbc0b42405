"""Exhaustive hyperparameter search with k-fold cross-validation.

For a fixed ``(min_samples_leaf, max_features)`` pair, one forest grown with
the largest tree count and depth of the grid contains every smaller
configuration: tree ``t`` depends only on ``(seed, t)``, and a depth-capped
walk reproduces a shallower tree exactly.  Each fold therefore needs one fit
per ``(min_samples_leaf, max_features)`` pair instead of one per grid point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, TooFewSamples
from . import _kernels as K
from .core import (
    ForestParams,
    TreeParams,
    average_trees,
    derive_seed,
    fit_forest,
    normalize_max_features,
)


@dataclass(frozen=True)
class HyperGrid:
    n_estimators: tuple = (50, 100, 150, 200, 250, 300)
    max_depth: tuple = (5, 10, 15, 20, 25, 30)
    min_samples_leaf: tuple = (1, 2, 3, 4, 5)
    max_features: tuple = ("auto", "sqrt", 0.33, 0.5, 0.75, 1.0)

    def __post_init__(self):
        for name in ("n_estimators", "max_depth", "min_samples_leaf", "max_features"):
            values = tuple(getattr(self, name))
            if not values:
                raise ConfigError(f"grid axis {name} is empty")
            object.__setattr__(self, name, values)

    @property
    def size(self) -> int:
        return (len(self.n_estimators) * len(self.max_depth)
                * len(self.min_samples_leaf) * len(self.max_features))

    def combinations(self):
        return list(itertools.product(self.n_estimators, self.max_depth,
                                      self.min_samples_leaf, self.max_features))

    def to_dict(self):
        return {k: list(getattr(self, k)) for k in
                ("n_estimators", "max_depth", "min_samples_leaf", "max_features")}

    @classmethod
    def from_dict(cls, d) -> "HyperGrid":
        return cls(**{k: tuple(v) for k, v in d.items()})


SEARCH_GRID = HyperGrid()


@dataclass(frozen=True)
class GridSearchResult:
    best: ForestParams
    table: tuple = field(repr=False)
    folds: int = 5

    def to_dict(self):
        return {"best": self.best.to_dict(), "folds": self.folds, "table": list(self.table)}


def fold_indices(n: int, folds: int, seed: int) -> list:
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, folds)]


def _target_seed(seed: int, c: int, multi: bool) -> int:
    return derive_seed(seed, c) if multi else seed


def grid_search_cv(X, y, grid: HyperGrid = SEARCH_GRID, folds: int = 5, seed: int = 0,
                   n_jobs: int = 1, bootstrap_fraction: float = 1.0) -> GridSearchResult:
    """Mean validation RMSE of every grid point over ``folds`` folds.

    ``y`` may be a matrix; each column then gets its own forest (seeded as in
    ``fit_multi_target``) and the fold RMSE pools all columns.  Ties on RMSE go
    to fewer trees, then shallower depth, then larger ``min_samples_leaf``,
    then the listed order of ``max_features``.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(y, dtype=np.float64)
    multi = Y.ndim == 2
    if not multi:
        Y = Y[:, None]
    n = X.shape[0]
    if folds < 2:
        raise ConfigError("folds must be >= 2")
    if n < folds:
        raise TooFewSamples(f"{n} samples cannot fill {folds} folds")

    n_est = sorted(set(grid.n_estimators))
    depths = sorted(set(grid.max_depth))
    t_max, d_max = n_est[-1], depths[-1]
    caps = np.array(depths, dtype=np.int64)
    mf_list = list(grid.max_features)
    mf_norm = [normalize_max_features(m) for m in mf_list]

    # sq_err[(leaf, mf_index)][depth_i, n_i] per fold
    fold_rmse = {}
    parts = fold_indices(n, folds, seed)
    for f_i, val in enumerate(parts):
        train = np.setdiff1d(np.arange(n), val)
        Xtr, Xva = X[train], X[val]
        for leaf in sorted(set(grid.min_samples_leaf)):
            for m_i, mf in enumerate(mf_norm):
                if mf_norm.index(mf) != m_i:
                    continue  # duplicate spelling of the same setting
                sq = np.zeros((len(depths), len(n_est)))
                for c in range(Y.shape[1]):
                    params = ForestParams(t_max, TreeParams(d_max, leaf, mf, bootstrap_fraction),
                                          _target_seed(seed, c, multi))
                    forest = fit_forest(Xtr, Y[train, c], params, n_jobs=n_jobs)
                    per_cap = K.predict_trees_multi_cap(
                        forest.feature, forest.threshold, forest.left, forest.right,
                        forest.value, forest.depth, forest.offsets, Xva, caps)
                    for d_i in range(len(depths)):
                        for n_i, nt in enumerate(n_est):
                            pred = average_trees(per_cap[d_i], nt, forest.y_min, forest.y_max)
                            sq[d_i, n_i] += float(np.sum((Y[val, c] - pred) ** 2))
                fold_rmse[(f_i, leaf, m_i)] = np.sqrt(sq / (len(val) * Y.shape[1]))

    rows = []
    for nt, dp, leaf, mf in grid.combinations():
        m_i = mf_norm.index(normalize_max_features(mf))
        d_i, n_i = depths.index(dp), n_est.index(nt)
        per_fold = [float(fold_rmse[(f_i, leaf, m_i)][d_i, n_i]) for f_i in range(folds)]
        rows.append({
            "n_estimators": nt,
            "max_depth": dp,
            "min_samples_leaf": leaf,
            "max_features": mf,
            "mean_rmse": float(np.mean(per_fold)),
            "fold_rmse": per_fold,
        })

    def key(i):
        r = rows[i]
        return (r["mean_rmse"], r["n_estimators"], r["max_depth"], -r["min_samples_leaf"],
                mf_list.index(r["max_features"]), i)

    best_row = rows[min(range(len(rows)), key=key)]
    best = ForestParams(best_row["n_estimators"],
                        TreeParams(best_row["max_depth"], best_row["min_samples_leaf"],
                                   best_row["max_features"], bootstrap_fraction),
                        seed)
    return GridSearchResult(best, tuple(rows), folds)


def cv_rmse_direct(X, y, params: ForestParams, folds: int = 5, seed: int = 0) -> float:
    """Reference evaluation: fit each fold with exactly ``params``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(y, dtype=np.float64)
    multi = Y.ndim == 2
    if not multi:
        Y = Y[:, None]
    out = []
    for val in fold_indices(X.shape[0], folds, seed):
        train = np.setdiff1d(np.arange(X.shape[0]), val)
        sq = 0.0
        for c in range(Y.shape[1]):
            p = params.with_seed(_target_seed(seed, c, multi))
            pred = fit_forest(X[train], Y[train, c], p).predict(X[val])
            sq += float(np.sum((Y[val, c] - pred) ** 2))
        out.append(math.sqrt(sq / (len(val) * Y.shape[1])))
    return float(np.mean(out))
