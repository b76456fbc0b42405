"""Tune-then-fit helper shared by the pipelines."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError, reject_unknown_keys
from .core import ForestParams, fit_multi_target
from .search import SEARCH_GRID, HyperGrid, grid_search_cv

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ForestTuning:
    """Either a hyperparameter grid searched by k-fold CV or fixed parameters.

    With many targets only ``max_tuning_targets`` evenly spaced columns enter
    the search (their RMSE is pooled); the chosen setting is then used for
    every target.
    """

    grid: Optional[HyperGrid] = SEARCH_GRID
    fixed: Optional[ForestParams] = None
    folds: int = 5
    max_tuning_targets: int = 10

    def __post_init__(self):
        if (self.grid is None) == (self.fixed is None):
            raise ConfigError("give exactly one of grid or fixed forest parameters")
        if self.folds < 2 or self.max_tuning_targets < 1:
            raise ConfigError("folds must be >= 2 and max_tuning_targets >= 1")

    def to_dict(self) -> dict:
        return {
            "grid": None if self.grid is None else self.grid.to_dict(),
            "fixed": None if self.fixed is None else self.fixed.to_dict(),
            "folds": self.folds,
            "max_tuning_targets": self.max_tuning_targets,
        }

    @classmethod
    def from_dict(cls, d) -> "ForestTuning":
        reject_unknown_keys(d, ("grid", "fixed", "folds", "max_tuning_targets"), "tuning")
        grid = d.get("grid")
        fixed = d.get("fixed")
        return cls(
            grid=None if grid is None else HyperGrid.from_dict(grid),
            fixed=None if fixed is None else ForestParams.from_dict(fixed),
            folds=int(d.get("folds", 5)),
            max_tuning_targets=int(d.get("max_tuning_targets", 10)),
        )


def tuning_columns(n_targets: int, limit: int) -> np.ndarray:
    if n_targets <= limit:
        return np.arange(n_targets)
    return np.unique(np.round(np.linspace(0, n_targets - 1, limit)).astype(int))


def tune_and_fit(X, Y, tuning: ForestTuning, seed: int, n_jobs: int = 1) -> tuple:
    """Return ``(MultiTargetForest, info)``; ``info`` is JSON-serialisable."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[:, None]
    n = len(X)
    info = {"n_rows": n, "n_features": X.shape[1], "n_targets": Y.shape[1]}
    if tuning.fixed is not None:
        params = tuning.fixed.with_seed(seed)
        info["tuned"] = False
    else:
        folds = min(tuning.folds, n)
        if folds < 2:
            params = ForestParams(seed=seed)
            info["tuned"] = False
            log.warning("only %d training rows; using default forest parameters", n)
        else:
            cols = tuning_columns(Y.shape[1], tuning.max_tuning_targets)
            target = Y[:, cols] if len(cols) > 1 else Y[:, cols[0]]
            result = grid_search_cv(X, target, tuning.grid, folds=folds, seed=seed, n_jobs=n_jobs)
            params = result.best
            best_rmse = min(r["mean_rmse"] for r in result.table)
            info.update(tuned=True, folds=folds, tuning_columns=cols.tolist(),
                        n_combinations=len(result.table), best_cv_rmse=best_rmse,
                        cv_table=[dict(r) for r in result.table])
    info["params"] = params.to_dict()
    model = fit_multi_target(X, Y, params, n_jobs=n_jobs)
    return model, info
