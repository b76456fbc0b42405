"""From-scratch random-forest regression with grid-search tuning."""

from .core import (
    Forest,
    ForestParams,
    MultiTargetForest,
    RegressionTree,
    TreeParams,
    derive_seed,
    fit_forest,
    fit_multi_target,
    fit_tree,
    predict,
    resolve_max_features,
)
from .persist import load_archive, save_archive
from .search import SEARCH_GRID, GridSearchResult, HyperGrid, cv_rmse_direct, grid_search_cv
from .tuning import ForestTuning, tune_and_fit

__all__ = [
    "Forest",
    "ForestParams",
    "ForestTuning",
    "GridSearchResult",
    "HyperGrid",
    "MultiTargetForest",
    "SEARCH_GRID",
    "RegressionTree",
    "TreeParams",
    "cv_rmse_direct",
    "derive_seed",
    "fit_forest",
    "fit_multi_target",
    "fit_tree",
    "grid_search_cv",
    "load_archive",
    "predict",
    "resolve_max_features",
    "save_archive",
    "tune_and_fit",
]
