import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifetest.errors import (
    ConfigError,
    ConstantInput,
    GridOutOfDomain,
    LengthMismatch,
    MapeUndefined,
    NonMonotoneX,
    R2Undefined,
    TooFewPoints,
)
from lifetest.model import CurveKind, SampledCurve
from lifetest.numerics import GridSpec, compute_metrics, fit_spline, kmeans, pearson_abs, resample_curve


# ---------------------------------------------------------------- spline oracle


def natural_spline_oracle(x, y, xq):
    """Second-derivative formulation solved as a dense linear system."""
    n = len(x)
    h = np.diff(x)
    A = np.zeros((n, n))
    b = np.zeros(n)
    A[0, 0] = A[-1, -1] = 1.0
    for i in range(1, n - 1):
        A[i, i - 1] = h[i - 1]
        A[i, i] = 2 * (h[i - 1] + h[i])
        A[i, i + 1] = h[i]
        b[i] = 6 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1])
    M = np.linalg.solve(A, b)
    out = []
    for q in xq:
        i = min(max(np.searchsorted(x, q) - 1, 0), n - 2)
        t0, t1 = x[i + 1] - q, q - x[i]
        out.append(M[i] * t0**3 / (6 * h[i]) + M[i + 1] * t1**3 / (6 * h[i])
                   + (y[i] / h[i] - M[i] * h[i] / 6) * t0 + (y[i + 1] / h[i] - M[i + 1] * h[i] / 6) * t1)
    return np.array(out)


def test_spline_matches_dense_oracle(rng):
    x = np.sort(rng.uniform(0, 10, 15))
    y = np.sin(x) + 0.1 * rng.standard_normal(15)
    xq = rng.uniform(x[0], x[-1], 200)
    np.testing.assert_allclose(fit_spline(x, y)(xq), natural_spline_oracle(x, y, xq), rtol=0, atol=1e-10)


def test_spline_is_natural_at_the_ends(rng):
    x = np.sort(rng.uniform(0, 1, 9))
    s = fit_spline(x, rng.standard_normal(9))
    assert abs(s.second_derivative(x[0])) < 1e-9
    assert abs(s.second_derivative(x[-1])) < 1e-9


@pytest.mark.parametrize("x,y,err", [
    ([0, 1], [0, 1], TooFewPoints),
    ([0, 2, 1], [0, 1, 2], NonMonotoneX),
    ([0, 1, 1], [0, 1, 2], NonMonotoneX),
    ([0, 1, 2], [0, 1], LengthMismatch),
])
def test_spline_rejects_bad_knots(x, y, err):
    with pytest.raises(err):
        fit_spline(x, y)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(-50, 50), b=st.floats(-50, 50), n=st.integers(3, 40),
       lo=st.floats(0.0, 0.45), hi=st.floats(0.55, 1.0), m=st.integers(2, 60),
       seed=st.integers(0, 2**16))
def test_affine_curves_survive_resampling(a, b, n, lo, hi, m, seed):
    r = np.random.default_rng(seed)
    x = np.sort(r.uniform(0, 1, n))
    x[0], x[-1] = 0.0, 1.0
    x = np.unique(x)
    if len(x) < 3:
        return
    curve = SampledCurve(CurveKind.IV, x, a * x + b)
    out = resample_curve(curve, GridSpec(lo, hi, m))
    scale = 1.0 + abs(a) + abs(b)
    assert np.max(np.abs(out.y - (a * out.x + b))) <= 1e-9 * scale


@settings(max_examples=40, deadline=None)
@given(n=st.integers(3, 50), seed=st.integers(0, 2**16))
def test_knots_are_reproduced(n, seed):
    r = np.random.default_rng(seed)
    grid = GridSpec(0.1, 2.3, n)
    y = r.standard_normal(n)
    out = resample_curve(SampledCurve(CurveKind.CV, grid.points(), y), grid)
    assert np.max(np.abs(out.y - y)) <= 1e-12


def test_resampling_refuses_to_extrapolate():
    curve = SampledCurve(CurveKind.IV, [0.0, 1.0, 2.0, 3.0], [1.0, 0.9, 0.8, 0.6])
    with pytest.raises(GridOutOfDomain):
        resample_curve(curve, GridSpec(0.0, 3.1, 10))
    with pytest.raises(GridOutOfDomain):
        resample_curve(curve, GridSpec(-0.1, 3.0, 10))


def test_resampling_accepts_descending_x_and_keeps_units():
    curve = SampledCurve(CurveKind.LSV, [3.0, 2.0, 1.0, 0.0], [3.0, 2.0, 1.0, 0.0], y_unit="A/cm2")
    out = resample_curve(curve, GridSpec(0.0, 3.0, 7))
    np.testing.assert_allclose(out.y, out.x, atol=1e-12)
    assert out.y_unit == "A/cm2" and out.kind is CurveKind.LSV


def test_grid_spec_validation_and_round_trip():
    g = GridSpec(0.051, 0.4, 100)
    assert len(g.points()) == 100 and g.points()[0] == 0.051 and g.points()[-1] == 0.4
    assert GridSpec.from_dict(g.to_dict()) == g
    with pytest.raises(ConfigError):
        GridSpec(1.0, 1.0, 5)
    with pytest.raises(ConfigError):
        GridSpec(0.0, 1.0, 1)


# ---------------------------------------------------------------- k-means


def best_two_partition_sse(values):
    """Exhaustive optimum for k=2 in one dimension: some contiguous cut of the sorted values."""
    v = np.sort(values)
    best = math.inf
    for cut in range(1, len(v)):
        a, b = v[:cut], v[cut:]
        best = min(best, float(((a - a.mean()) ** 2).sum() + ((b - b.mean()) ** 2).sum()))
    return best


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), n1=st.integers(2, 15), n2=st.integers(2, 15),
       gap=st.floats(5.0, 100.0))
def test_kmeans_finds_the_exhaustive_optimum_on_separated_1d_data(seed, n1, n2, gap):
    r = np.random.default_rng(seed)
    pts = np.concatenate([r.uniform(0, 1, n1), r.uniform(gap, gap + 1, n2)])
    res = kmeans(pts, 2, seed=seed)
    assert res.sse == pytest.approx(best_two_partition_sse(pts), rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16), n=st.integers(3, 40), k=st.integers(1, 3), d=st.integers(1, 3))
def test_kmeans_sse_never_increases(seed, n, k, d):
    pts = np.random.default_rng(seed).standard_normal((n, d))
    res = kmeans(pts, k, seed=seed, check=True)
    hist = np.array(res.sse_history)
    assert np.all(np.diff(hist) <= 1e-9 * (1 + hist[:-1]))
    assert res.assignments.shape == (n,) and set(res.assignments) <= set(range(k))


def test_kmeans_is_deterministic_and_validates(rng):
    pts = rng.standard_normal((30, 2))
    a, b = kmeans(pts, 3, seed=5), kmeans(pts, 3, seed=5)
    assert np.array_equal(a.assignments, b.assignments) and np.array_equal(a.centroids, b.centroids)
    with pytest.raises(TooFewPoints):
        kmeans(pts[:2], 3)
    with pytest.raises(ConfigError):
        kmeans(pts, 0)


# ---------------------------------------------------------------- metrics


def literal_metrics(y, p):
    n = len(y)
    mae = sum(abs(y[i] - p[i]) for i in range(n)) / n
    mape = 100.0 / n * sum(abs((y[i] - p[i]) / y[i]) for i in range(n))
    rmse = math.sqrt(sum((y[i] - p[i]) ** 2 for i in range(n)) / n)
    return mae, mape, rmse


def test_metrics_match_literal_formulas_on_1000_vectors():
    r = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        n = int(r.integers(1, 50))
        y = r.uniform(0.5, 10.0, n) * r.choice([-1, 1], n)
        p = y + r.normal(0, 1, n)
        m = compute_metrics(y, p, r2=False)
        mae, mape, rmse = literal_metrics(list(y), list(p))
        for got, want in ((m.mae, mae), (m.mape_percent, mape), (m.rmse, rmse)):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30).filter(lambda v: np.ptp(v) > 1e-6))
def test_perfect_predictions_score_r2_one(values):
    m = compute_metrics(values, values, mape=False)
    assert m.r2 == 1.0 and m.mae == 0.0 and m.rmse == 0.0


def test_r2_formula_and_undefined_cases():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    p = np.array([1.1, 1.9, 3.2, 3.7])
    want = 1 - np.sum((y - p) ** 2) / np.sum((y - y.mean()) ** 2)
    assert compute_metrics(y, p).r2 == pytest.approx(want, abs=1e-15)
    with pytest.raises(MapeUndefined):
        compute_metrics([0.0, 1.0], [0.0, 1.0])
    with pytest.raises(R2Undefined):
        compute_metrics([2.0, 2.0], [2.0, 1.0])
    loose = compute_metrics([0.0, 0.0], [1.0, 0.0], strict=False)
    assert loose.mape_percent is None and loose.r2 is None
    assert set(loose.undefined) == {"mape_percent", "r2"}
    with pytest.raises(LengthMismatch):
        compute_metrics([1.0], [1.0, 2.0])


def test_pearson_abs():
    x = np.arange(10.0)
    assert pearson_abs(x, -3 * x + 1) == pytest.approx(1.0)
    with pytest.raises(ConstantInput):
        pearson_abs(x, np.ones(10))
