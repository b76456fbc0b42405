"""Acceptance suite.

Criteria 1-9 run offline on synthetic data and oracles.  Criteria 10-15 reproduce
published numbers and need locally converted datasets; point these variables at a
canonical manifest produced by ``lifetest ingest``:

    LIFETEST_DATASET1   PEMFC collection (criteria 10-13)
    LIFETEST_DATASET2   PEMWE collection (criterion 15)
    LIFETEST_DATASET3   capacitor collection (criterion 14)

``LIFETEST_DATASET3_STAGES`` optionally overrides the capacitor stages as
``t1,t2,t3`` stage times.  Run with ``-s`` to see one line per criterion.
"""

import dataclasses
import math
import os
from pathlib import Path

import numpy as np
import pytest

from lifetest.errors import GridOutOfDomain
from lifetest.data_io import SynthConfig, generate_synthetic, load_dataset, split
from lifetest.forest import SEARCH_GRID, ForestParams, ForestTuning, HyperGrid, TreeParams, fit_forest
from lifetest.lpalt import LpAltConfig, acceleration_report, build_difference_curves, evaluate_lpalt, train_lpalt
from lifetest.model import CurveKind, SampledCurve, StageSpec
from lifetest.numerics import GridSpec, compute_metrics, resample_curve
from lifetest.pcdp import PcdpConfig, evaluate_pcdp, select_preset_frequencies, train_pcdp
from lifetest.sisso import SissoConfig, enumerate_two_point_features, fit_descriptor

PCDP_TUNING = ForestTuning(
    grid=HyperGrid(n_estimators=(100,), max_depth=(10, 30), min_samples_leaf=(1, 3),
                   max_features=("auto", "sqrt", 0.33)),
    max_tuning_targets=5,
)
LPALT_FIXED = ForestTuning(grid=None, fixed=ForestParams(100, TreeParams(10, 1, "all")))


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, bypassing capture, then assert."""

    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {title} ({detail})")
        assert ok, f"criterion {number}: {detail}"

    return report


def _checkups(lifetests):
    return [cu for lt in lifetests for cu in lt.checkups]


# ---------------------------------------------------------------- offline tier


def test_c01_grid_enumeration(verdict):
    combos = SEARCH_GRID.combinations()
    n = len(set(combos))
    verdict(1, "hyperparameter grid size", n == len(combos) == 1080, f"{n} vs 1080 exact")


def test_c02_two_point_feature_counts(verdict):
    got = {}
    for n in (5, 20, 51, 100):
        y = np.random.default_rng(n).standard_normal((2, n))
        x = np.linspace(0.0, 1.0, n)
        got[n] = enumerate_two_point_features([SampledCurve(CurveKind.DeltaVI, x, row) for row in y]).n_candidates
    want = {5: 10, 20: 190, 51: 1275, 100: 4950}
    verdict(2, "two-point feature counts", got == want, f"{got} vs {want} exact")


def test_c03_metric_formulas(verdict):
    r = np.random.default_rng(33)
    worst = 0.0
    for _ in range(1000):
        n = int(r.integers(1, 60))
        y = r.uniform(0.2, 5.0, n) * r.choice([-1.0, 1.0], n)
        p = y + r.normal(0.0, 0.7, n)
        m = compute_metrics(y, p, r2=False)
        mae = sum(abs(a - b) for a, b in zip(y, p)) / n
        mape = 100.0 / n * sum(abs((a - b) / a) for a, b in zip(y, p))
        rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(y, p)) / n)
        for got, want in ((m.mae, mae), (m.mape_percent, mape), (m.rmse, rmse)):
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    y = r.standard_normal(50)
    perfect = compute_metrics(y, y).r2
    verdict(3, "MAE/MAPE/RMSE and perfect R2", worst <= 1e-12 and perfect == 1.0,
            f"worst rel err {worst:.2e} vs 1e-12, R2 {perfect} vs 1")


def test_c04_spline_standardisation(verdict):
    r = np.random.default_rng(44)
    worst_affine = worst_knot = 0.0
    for _ in range(200):
        a, b = r.uniform(-20, 20, 2)
        x = np.unique(np.concatenate([[0.0, 1.0], r.uniform(0, 1, int(r.integers(2, 40)))]))
        lo, hi = r.uniform(0.0, 0.45), r.uniform(0.55, 1.0)
        out = resample_curve(SampledCurve(CurveKind.IV, x, a * x + b), GridSpec(lo, hi, int(r.integers(2, 80))))
        worst_affine = max(worst_affine, np.max(np.abs(out.y - (a * out.x + b))) / (1 + abs(a) + abs(b)))
        g = GridSpec(0.05, 0.9, int(r.integers(3, 100)))
        y = r.standard_normal(g.n_points)
        worst_knot = max(worst_knot, np.max(np.abs(resample_curve(SampledCurve(CurveKind.CV, g.points(), y), g).y - y)))
    try:
        resample_curve(SampledCurve(CurveKind.IV, [0.0, 1.0, 2.0], [1.0, 2.0, 0.0]), GridSpec(0.0, 2.5, 5))
        raised = False
    except GridOutOfDomain:
        raised = True
    verdict(4, "spline resampling", worst_affine <= 1e-9 and worst_knot <= 1e-12 and raised,
            f"affine {worst_affine:.1e} vs 1e-9, knots {worst_knot:.1e} vs 1e-12, extrapolation raises {raised}")


def test_c05_difference_curve_laws(verdict):
    lifetests, _ = generate_synthetic(SynthConfig(n_devices=5, n_test=0, stages=(0, 1000, 30000), seed=55))
    zero = swap = offset = 0.0
    kinds = ("DeltaVI", "DeltaIV", "DeltaReF", "DeltaImF")
    for lt in lifetests:
        a, b = lt.checkups[0], lt.checkups[1]
        same = build_difference_curves(a, a)
        zero = max(zero, max(np.max(np.abs(same.get(k).y)) for k in kinds))
        fwd, rev = build_difference_curves(a, b), build_difference_curves(b, a)
        swap = max(swap, max(np.max(np.abs(fwd.get(k).y + rev.get(k).y)) for k in kinds))
        for which, kind in (("iv", "DeltaVI"), ("cv", "DeltaIV")):
            for c in (-3.7, 0.25, 11.0):
                for moved_a, moved_b in ((_shift(a, which, c), b), (a, _shift(b, which, c))):
                    f0 = enumerate_two_point_features([fwd.get(kind)]).matrix
                    f1 = enumerate_two_point_features([build_difference_curves(moved_a, moved_b).get(kind)]).matrix
                    offset = max(offset, np.max(np.abs(f0 - f1)))
    verdict(5, "difference-curve laws", zero <= 1e-12 and swap == 0.0 and offset <= 1e-12,
            f"zero {zero:.1e} vs 1e-12, antisymmetry {swap} exact, offset {offset:.1e} vs 1e-12")


def _shift(cu, which, c):
    curve = getattr(cu, which)
    return dataclasses.replace(cu, **{which: SampledCurve(curve.kind, curve.x, np.asarray(curve.y) + c)})


def test_c06_planted_descriptor(verdict):
    r = np.random.default_rng(2024)
    Y = r.standard_normal((28, 20))
    curves = [SampledCurve(CurveKind.DeltaVI, np.linspace(0, 1, 20), row) for row in Y]
    V = enumerate_two_point_features(curves).matrix
    clean = V[:, 3] + V[:, 7] - V[:, 12]
    target = clean + 0.01 * np.std(clean) * r.standard_normal(28)
    formula = fit_descriptor(curves, target, SissoConfig())
    ok = formula.r2 >= 0.99 and formula.n_leaves <= 6
    verdict(6, "planted descriptor recovery", ok, f"R2 {formula.r2:.4f} vs 0.99, leaves {formula.n_leaves} vs 6")


def test_c07_forest_contracts(verdict):
    r = np.random.default_rng(77)
    X = r.uniform(0, 1, (100, 4))
    y = X @ [2.0, -1.0, 0.5, 1.5] + 0.3 * r.standard_normal(100)
    params = ForestParams(60, TreeParams(12, 1, "sqrt"), seed=7)
    one = fit_forest(X, y, params, n_jobs=1)
    many = fit_forest(X, y, params, n_jobs=4)
    p = one.predict(r.uniform(-10, 10, (10_000, 4)))
    bounded = bool(p.min() >= y.min() and p.max() <= y.max())
    Q = r.standard_normal((1000, 4))
    bitwise = all(np.array_equal(getattr(one, k), getattr(many, k))
                  for k in ("feature", "threshold", "left", "right", "value")) and \
        np.array_equal(one.predict(Q), many.predict(Q))
    # reference-oracle run on this benchmark data gave R2 = 0.9996
    s = np.random.default_rng(20)
    Xs, Xt = s.uniform(-1, 1, (200, 1)), s.uniform(-1, 1, (500, 1))
    sq = fit_forest(Xs, Xs[:, 0] ** 2, ForestParams(100, TreeParams(10, 1, "all"), seed=0))
    r2 = compute_metrics(Xt[:, 0] ** 2, sq.predict(Xt)).r2
    verdict(7, "forest contracts", bounded and bitwise and r2 >= 0.9,
            f"bounded on 1e4 queries {bounded}, 1 vs 4 threads bitwise {bitwise}, x^2 R2 {r2:.4f} vs 0.9")


def test_c08_synthetic_pcdp(verdict):
    lifetests, spec = generate_synthetic(SynthConfig(seed=0))
    train, test = split(lifetests, spec)
    assert (len(train), len(test)) == (22, 8)
    bundle = train_pcdp(_checkups(train), PcdpConfig(seed=0, indicator_training_source="measured",
                                                     tuning=PCDP_TUNING))
    ev = evaluate_pcdp(bundle, _checkups(test))
    eis = ev.metrics("EIS").r2
    chained = {k: ev.metrics(k, "predicted").r2 for k in ("r_o2_total", "i_lim", "ecsa", "i_cross")}
    ok = eis >= 0.95 and min(chained.values()) >= 0.90
    shown = ", ".join(f"{k} {v:.3f}" for k, v in chained.items())
    verdict(8, "synthetic PCDP", ok, f"EIS R2 {eis:.4f} vs 0.95; chained {shown} vs 0.90")


def test_c09_synthetic_lpalt(verdict):
    cfg = SynthConfig(n_devices=60, n_test=20, stages=(0, 1000, 30000), noise=0.0005, tau_deg=3000,
                      ro2_0=(95, 105), r0_membrane=0)
    stages = StageSpec(0.0, 1000.0, 30000.0)
    worst = {}
    for seed in range(5):
        lifetests, spec = generate_synthetic(dataclasses.replace(cfg, seed=seed))
        train, test = split(lifetests, spec)
        ev = evaluate_lpalt(train_lpalt(train, LpAltConfig(stages, tuning=LPALT_FIXED, seed=seed)), test)
        for ind in ("i_lim", "r_o2_total", "ecsa"):
            worst[ind] = min(worst.get(ind, 1.0), ev.metrics(ind, "t3").r2)
    ratio = acceleration_report(stages, 30000.0)["ratio"]
    shown = ", ".join(f"{k} {v:.3f}" for k, v in worst.items())
    verdict(9, "synthetic LP-ALT", min(worst.values()) >= 0.90 and ratio == 30.0,
            f"worst T3 R2 over 5 seeds: {shown} vs 0.90; ratio {ratio} vs 30.0 exact")


# ---------------------------------------------------------------- dataset tier


def _dataset(var):
    path = os.environ.get(var)
    if not path:
        pytest.skip(f"{var} not set")
    lifetests, spec = load_dataset(Path(path))
    if spec is None:
        pytest.skip(f"{var} manifest carries no split")
    return split(lifetests, spec)


@pytest.fixture(scope="module")
def pemfc():
    return _dataset("LIFETEST_DATASET1")


@pytest.fixture(scope="module")
def pemfc_pcdp(pemfc):
    train, test = pemfc
    bundle = train_pcdp(_checkups(train), PcdpConfig(seed=0))
    return bundle, evaluate_pcdp(bundle, _checkups(test))


def _default_stages(lifetests):
    cu = lifetests[0].checkups
    return StageSpec(cu[0].stage_time, cu[1].stage_time, cu[-1].stage_time)


@pytest.mark.dataset
def test_c10_pemfc_preset_frequencies(verdict, pemfc):
    train, _ = pemfc
    pf = select_preset_frequencies([cu.eis for cu in _checkups(train) if cu.eis is not None], seed=0)
    got = (pf.f_medium, pf.f_high)
    verdict(10, "PEMFC preset frequencies", got == (7.9433, 7943.3), f"{got} vs (7.9433, 7943.3) exact")


@pytest.mark.dataset
def test_c11_pemfc_eis_reconstruction(verdict, pemfc_pcdp):
    r2 = pemfc_pcdp[1].metrics("EIS").r2
    verdict(11, "PEMFC EIS reconstruction", r2 >= 0.93, f"R2 {r2:.4f} vs 0.93")


@pytest.mark.dataset
def test_c12_pemfc_indicators(verdict, pemfc_pcdp):
    ev = pemfc_pcdp[1]
    targets = {"predicted": (0.70, 0.89, 0.92, 0.88), "measured": (0.75, 0.94, 0.98, 0.94)}
    names = ("r_o2_total", "i_lim", "ecsa", "i_cross")
    worst, parts = 0.0, []
    for source, values in targets.items():
        for name, want in zip(names, values):
            got = ev.metrics(name, source).r2
            worst = max(worst, abs(got - want))
            parts.append(f"{name}/{source} {got:.2f} vs {want:.2f}")
    verdict(12, "PEMFC indicator R2", worst <= 0.10, f"{'; '.join(parts)}; max gap {worst:.3f} vs 0.10")


@pytest.mark.dataset
def test_c13_pemfc_lpalt(verdict, pemfc):
    train, test = pemfc
    ev = evaluate_lpalt(train_lpalt(train, LpAltConfig(_default_stages(train), seed=0)), test)
    got = {k: ev.metrics(k, "t3").r2 for k in ("i_lim", "r_o2_total", "ecsa")}
    verdict(13, "PEMFC LP-ALT", min(got.values()) >= 0.85,
            ", ".join(f"{k} {v:.3f}" for k, v in got.items()) + " vs 0.85")


@pytest.mark.dataset
def test_c14_capacitor_lpalt(verdict):
    train, test = _dataset("LIFETEST_DATASET3")
    override = os.environ.get("LIFETEST_DATASET3_STAGES")
    stages = StageSpec(*map(float, override.split(","))) if override else _default_stages(train)
    ev = evaluate_lpalt(train_lpalt(train, LpAltConfig(stages, indicators=("c_rem",), seed=0)), test)
    mape = ev.metrics("c_rem", "t3").mape_percent
    ratio = acceleration_report(stages, float(stages.t3))["ratio"]
    verdict(14, "capacitor LP-ALT", mape <= 5.0 and ratio > 40,
            f"C_rem MAPE {mape:.2f}% vs 5%, ratio {ratio:.3f} vs > 40")


@pytest.mark.dataset
def test_c15_pemwe_pcdp(verdict):
    train, test = _dataset("LIFETEST_DATASET2")
    bundle = train_pcdp(_checkups(train), PcdpConfig(seed=0))
    ev = evaluate_pcdp(bundle, _checkups(test))
    pair = (bundle.preset.f_medium, bundle.preset.f_high)
    eis, iv = ev.metrics("EIS").r2, ev.metrics("IV").r2
    verdict(15, "PEMWE PCDP", pair == (39.138828, 6530.0005) and eis >= 0.95 and iv >= 0.95,
            f"pair {pair} vs (39.138828, 6530.0005) exact, EIS R2 {eis:.4f} vs 0.95, IV R2 {iv:.4f} vs 0.95")
