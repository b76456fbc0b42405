import numpy as np
import pytest

from lifetest.data_io import SynthConfig, generate_synthetic, split
from lifetest.data_io.synthetic import EIS_GRID_HZ
from lifetest.errors import (
    ConfigError,
    DimensionMismatch,
    FrequencyGridMismatch,
    FrequencyMissing,
    InsufficientRange,
    NoTrainingRows,
)
from lifetest.forest import ForestParams, ForestTuning, TreeParams
from lifetest.model import CheckUp, EisSpectrum
from lifetest.pcdp import (
    PcdpConfig,
    PresetFrequencies,
    ProbeVector,
    curve_frequency_pair,
    evaluate_pcdp,
    load_pcdp_bundle,
    predict_pcdp,
    predict_pcdp_batch,
    probe_impedances,
    save_pcdp_bundle,
    select_preset_frequencies,
    train_pcdp,
)

FAST = ForestTuning(grid=None, fixed=ForestParams(12, TreeParams(8, 1, "sqrt")))
GRID = np.array(EIS_GRID_HZ)


def _checkups(lifetests):
    return [cu for lt in lifetests for cu in lt.checkups]


@pytest.fixture(scope="module")
def bundle(small_split):
    train, _ = small_split
    return train_pcdp(_checkups(train), PcdpConfig(seed=5, tuning=FAST))


# ---------------------------------------------------------------- frequency selection


def step_spectrum(cut_hz=100.0):
    re = np.where(GRID < cut_hz, 100.0, 10.0)
    return EisSpectrum(GRID, re, -0.1 * re)


def test_step_spectrum_pair_matches_hand_computation():
    low = GRID[GRID < 100.0]
    high = GRID[GRID >= 100.0]
    medium_grid = GRID[(GRID >= 1) & (GRID <= 100)]
    high_grid = GRID[(GRID >= 100) & (GRID <= 1e4)]
    want = (medium_grid[np.argmin(np.abs(medium_grid - low.mean()))],
            high_grid[np.argmin(np.abs(high_grid - high.mean()))])
    assert want == (19.953, 2511.9)
    assert curve_frequency_pair(step_spectrum(), seed=0) == want


def test_synthetic_training_spectra_give_a_frozen_pair():
    lifetests, spec = generate_synthetic(SynthConfig())
    train, _ = split(lifetests, spec)
    pf = select_preset_frequencies([cu.eis for cu in _checkups(train)], seed=0)
    assert (pf.f_medium, pf.f_high) == (7.9433, 1995.3)
    assert sum(c for _, c in pf.votes) == len(_checkups(train))
    assert PresetFrequencies.from_dict(pf.to_dict()) == pf


def test_majority_vote_with_ties_to_the_lower_medium_frequency():
    a, b = step_spectrum(100.0), step_spectrum(10.0)
    pa, pb = curve_frequency_pair(a), curve_frequency_pair(b)
    assert pa != pb
    assert (select_preset_frequencies([a, b, b]).f_medium, select_preset_frequencies([a, b, b]).f_high) == pb
    tie = select_preset_frequencies([a, b])
    assert tie.f_medium == min(pa[0], pb[0])


def test_frequency_selection_guards():
    with pytest.raises(InsufficientRange):
        curve_frequency_pair(EisSpectrum(GRID[:20], np.ones(20), np.ones(20)))
    with pytest.raises(NoTrainingRows):
        select_preset_frequencies([])


def test_probe_lookup():
    s = step_spectrum()
    p = probe_impedances(s, PresetFrequencies(7.9433, 1995.3))
    assert p == ProbeVector(100.0, -10.0, 10.0, -1.0)
    with pytest.raises(FrequencyMissing):
        probe_impedances(s, PresetFrequencies(8.0, 1995.3))


# ---------------------------------------------------------------- training and prediction


def test_bundle_shapes(bundle):
    assert len(bundle.frequencies_hz) == 41
    assert bundle.eis_model.n_features == 4 and bundle.eis_model.n_targets == 82
    assert {k: m.n_targets for k, m in bundle.curve_models.items()} == {"IV": 20, "CV": 100, "LSV": 100}
    assert set(bundle.indicator_models) == {("r_o2_total", "EIS"), ("i_lim", "IV"),
                                            ("ecsa", "CV"), ("i_cross", "LSV")}
    assert bundle.indicator_model("ecsa").n_features == 100


def test_chained_prediction(bundle, small_split):
    _, test = small_split
    cu = test[0].checkups[0]
    pred = predict_pcdp(bundle, probe_impedances(cu.eis, bundle.preset))
    np.testing.assert_array_equal(pred.eis.frequencies_hz, GRID)
    assert len(pred.curves["IV"].x) == 20 and pred.curves["CV"].x[0] == 0.051
    assert set(pred.indicators.present()) == {"r_o2_total", "i_lim", "ecsa", "i_cross"}
    assert set(pred.provenance.values()) == {"predicted"}
    with pytest.raises(DimensionMismatch):
        predict_pcdp_batch(bundle, [np.zeros(5)])


def test_evaluation_scores_both_sources(bundle, small_split):
    _, test = small_split
    ev = evaluate_pcdp(bundle, _checkups(test))
    keys = {(r["output"], r["source"]) for r in ev.rows}
    assert ("EIS", "predicted") in keys
    for out in ("IV", "CV", "LSV", "r_o2_total", "i_lim", "ecsa", "i_cross"):
        assert {(out, "predicted"), (out, "measured")} <= keys
    assert ev.metrics("EIS").r2 > 0.9
    assert ev.to_dict()["rows"][0]["metrics"]["n"] > 0


def test_bundle_persistence_is_bitwise(bundle, small_split, tmp_path):
    _, test = small_split
    probes = [probe_impedances(cu.eis, bundle.preset) for cu in _checkups(test)]
    save_pcdp_bundle(bundle, tmp_path / "b")
    back = load_pcdp_bundle(tmp_path / "b")
    assert back.preset == bundle.preset and back.config.to_dict() == bundle.config.to_dict()
    for a, b in zip(predict_pcdp_batch(bundle, probes), predict_pcdp_batch(back, probes)):
        assert a.eis == b.eis and a.indicators == b.indicators
        assert all(a.curves[k] == b.curves[k] for k in a.curves)


def test_training_is_deterministic_across_threads(small_split):
    train, test = small_split
    rows = _checkups(train)
    a = train_pcdp(rows, PcdpConfig(seed=2, tuning=FAST, threads=1))
    b = train_pcdp(rows, PcdpConfig(seed=2, tuning=FAST, threads=3))
    probes = [probe_impedances(cu.eis, a.preset) for cu in _checkups(test)]
    for pa, pb in zip(predict_pcdp_batch(a, probes), predict_pcdp_batch(b, probes)):
        assert pa.eis == pb.eis and pa.indicators == pb.indicators


def test_predicted_training_source(small_split):
    train, _ = small_split
    b = train_pcdp(_checkups(train), PcdpConfig(seed=1, tuning=FAST, indicator_training_source="predicted"))
    assert b.info["ecsa:CV"]["training_source"] == "predicted"


def test_training_guards(small_split):
    train, _ = small_split
    rows = _checkups(train)
    with pytest.raises(NoTrainingRows):
        train_pcdp([CheckUp("x", 0.0)], PcdpConfig(tuning=FAST))
    odd = rows[0]
    e = odd.eis
    shifted = EisSpectrum(e.frequencies_hz * 1.01, e.re, e.im)
    with pytest.raises(FrequencyGridMismatch):
        train_pcdp(rows[1:] + [CheckUp("y", 0.0, eis=shifted)], PcdpConfig(tuning=FAST))


def test_config_round_trip():
    cfg = PcdpConfig(seed=4, tuning=FAST, indicator_training_source="predicted")
    assert PcdpConfig.from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    with pytest.raises(ConfigError):
        PcdpConfig.from_dict({"seed": 1, "tunning": {}})
    with pytest.raises(ConfigError):
        PcdpConfig.from_dict({"tuning": {"grid": None, "folds": 3, "fixd": {}}})
