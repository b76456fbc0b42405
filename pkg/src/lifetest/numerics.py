"""Numerical kernels: natural cubic splines, grid resampling, k-means,
correlation and the regression error metrics used throughout the package."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import (
    ConfigError,
    ConstantInput,
    GridOutOfDomain,
    LengthMismatch,
    MapeUndefined,
    NonMonotoneX,
    R2Undefined,
    TooFewPoints,
)
from .model import SampledCurve


# ---------------------------------------------------------------- splines


@dataclass(frozen=True, eq=False)
class Spline:
    """Natural cubic spline.

    ``coefficients[:, i]`` holds the cubic, quadratic, linear and constant
    coefficients of interval ``[x[i], x[i+1]]`` in the local variable
    ``x - x[i]``.
    """

    x: np.ndarray
    y: np.ndarray
    coefficients: np.ndarray
    _impl: CubicSpline = field(repr=False)

    def __call__(self, xq, nu: int = 0) -> np.ndarray:
        return self._impl(np.asarray(xq, dtype=float), nu)

    def second_derivative(self, xq) -> np.ndarray:
        return self(xq, 2)


def fit_spline(x, y) -> Spline:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"x has shape {x.shape}, y has shape {y.shape}")
    if len(x) < 3:
        raise TooFewPoints(f"spline needs >= 3 points, got {len(x)}")
    if not np.all(np.diff(x) > 0):
        raise NonMonotoneX("spline knots must be strictly increasing")
    impl = CubicSpline(x, y, bc_type="natural")
    return Spline(x.copy(), y.copy(), impl.c.copy(), impl)


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """``n_points`` evenly spaced values, both endpoints included."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ConfigError(f"grid needs x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise ConfigError(f"grid needs an integer n_points >= 2, got {self.n_points}")

    def points(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, int(self.n_points))

    @property
    def step(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max, "n_points": int(self.n_points)}

    @classmethod
    def from_dict(cls, d) -> "GridSpec":
        return cls(float(d["x_min"]), float(d["x_max"]), int(d["n_points"]))


def resample_curve(curve: SampledCurve, grid: GridSpec) -> SampledCurve:
    """Evaluate a natural spline through ``curve`` on ``grid``.

    No extrapolation: grid points must lie inside the measured x-range up to
    1e-9 of its span.  Grid points that coincide with a knot return the knot's
    y unchanged.
    """
    x = np.asarray(curve.x)
    y = np.asarray(curve.y)
    if len(x) >= 2 and x[0] > x[-1]:
        x, y = x[::-1], y[::-1]
    spline = fit_spline(x, y)
    g = grid.points()
    eps = 1e-9 * (x[-1] - x[0])
    if g[0] < x[0] - eps or g[-1] > x[-1] + eps:
        raise GridOutOfDomain(
            f"{curve.kind.value} grid [{g[0]}, {g[-1]}] outside measured range [{x[0]}, {x[-1]}]"
        )
    out = spline(np.clip(g, x[0], x[-1]))
    pos = np.searchsorted(x, g)
    pos = np.clip(pos, 0, len(x) - 1)
    on_knot = x[pos] == g
    out[on_knot] = y[pos[on_knot]]
    return SampledCurve(curve.kind, g, out, curve.x_unit, curve.y_unit)


# ---------------------------------------------------------------- k-means


@dataclass(frozen=True, eq=False)
class Clustering:
    assignments: np.ndarray
    centroids: np.ndarray
    sse: float
    n_iter: int
    sse_history: tuple = ()


def _sq_dist(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_plusplus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dist(points, points[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dist(points, points[[idx]])[:, 0])
    return points[chosen].astype(float, copy=True)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300, tol: float = 0.0,
           check: bool = False) -> Clustering:
    """Lloyd's algorithm from a k-means++ start.

    Distances are squared Euclidean on the coordinates as given.  Ties in
    assignment go to the lowest cluster index.  Empty clusters keep their
    previous centroid.  With ``check=True`` the SSE is asserted to be
    non-increasing between iterations.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if k < 1 or max_iter < 1 or tol < 0:
        raise ConfigError("kmeans needs k >= 1, max_iter >= 1, tol >= 0")
    if len(pts) < k:
        raise TooFewPoints(f"kmeans with k={k} needs >= {k} points, got {len(pts)}")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(pts, k, rng)
    history = []
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        d2 = _sq_dist(pts, centroids)
        labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(pts)), labels].sum()))
        if check and len(history) > 1:
            assert history[-1] <= history[-2] * (1 + 1e-12) + 1e-300, history
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = pts[members].mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(axis=1)).max())
        centroids = new
        if shift <= tol:
            break
    d2 = _sq_dist(pts, centroids)
    labels = np.argmin(d2, axis=1)
    sse = float(d2[np.arange(len(pts)), labels].sum())
    if check:
        assert sse <= history[-1] * (1 + 1e-12) + 1e-300
    history.append(sse)
    return Clustering(labels, centroids, sse, n_iter, tuple(history))


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class MetricsReport:
    mae: float
    rmse: float
    mape_percent: Optional[float]
    r2: Optional[float]
    n: int
    unit: Optional[str] = None
    undefined: tuple = ()

    def to_dict(self) -> dict:
        return {
            "mae": self.mae,
            "rmse": self.rmse,
            "mape_percent": self.mape_percent,
            "r2": self.r2,
            "n": self.n,
            "unit": self.unit,
            "undefined": list(self.undefined),
        }


def compute_metrics(y_true, y_pred, *, mape: bool = True, r2: bool = True,
                    unit: Optional[str] = None, strict: bool = True) -> MetricsReport:
    """MAE, RMSE, MAPE (percent) and R².

    MAPE needs every true value nonzero, R² needs a nonconstant truth.  With
    ``strict=True`` a requested but undefined metric raises; otherwise it is
    reported as ``None`` and named in ``undefined``.
    """
    y = np.asarray(y_true, dtype=float).reshape(-1)
    p = np.asarray(y_pred, dtype=float).reshape(-1)
    if len(y) != len(p):
        raise LengthMismatch(f"{len(y)} true values vs {len(p)} predictions")
    if len(y) == 0:
        raise LengthMismatch("metrics need at least one sample")
    err = y - p
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err**2)))
    undefined = []
    mape_v = None
    if mape:
        if np.any(y == 0):
            if strict:
                raise MapeUndefined("MAPE undefined: some true values are 0")
            undefined.append("mape_percent")
        else:
            mape_v = float(100.0 * np.mean(np.abs(err / y)))
    r2_v = None
    if r2:
        ss_tot = float(np.sum((y - y.mean()) ** 2))
        if ss_tot == 0:
            if strict:
                raise R2Undefined("R² undefined: true values are constant")
            undefined.append("r2")
        else:
            r2_v = 1.0 - float(np.sum(err**2)) / ss_tot
    return MetricsReport(mae, rmse, mape_v, r2_v, len(y), unit, tuple(undefined))


def pearson_abs(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} vs {len(y)}")
    if len(x) < 2:
        raise TooFewPoints("correlation needs >= 2 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt(np.dot(xc, xc))
    sy = np.sqrt(np.dot(yc, yc))
    if sx == 0 or sy == 0:
        raise ConstantInput("correlation of a constant series")
    return float(min(1.0, abs(np.dot(xc, yc)) / (sx * sy)))
