"""Early prediction of end-of-test aging indicators from two early check-ups.

For each device the characterization curves of two early stages (T1, T2) are
standardized and subtracted; a +/- combination of two-point features of each
difference curve is selected by SISSO; a forest maps those descriptor values
to the indicator change from T1 to the end stage T3, and the T1 value is
added back.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    reject_unknown_keys,
    FrequencyGridMismatch,
    GridOutOfDomain,
    MissingT1Indicator,
    ModelMissing,
    NoGroundTruth,
    NoMatch,
    NoTrainingRows,
    SchemaError,
    ZeroT2Time,
)
from .forest import ForestTuning, MultiTargetForest, derive_seed, load_archive, save_archive, tune_and_fit
from .model import INDICATOR_UNITS, AgingIndicators, CheckUp, CurveKind, LifeTest, SampledCurve, StageSpec, resolve_stage, resolve_stages
from .numerics import GridSpec, compute_metrics, resample_curve
from .sisso import FeatureFormula, SissoConfig, fit_descriptor

log = logging.getLogger(__name__)

BUNDLE_VERSION = "lifetest-lpalt-bundle/1"

# indicator -> difference curves feeding its model
INDICATOR_FEATURES = {
    "i_lim": ("DeltaVI",),
    "r_o2_total": ("DeltaReF", "DeltaImF"),
    "ecsa": ("DeltaIV",),
    "c_rem": ("DeltaReF", "DeltaImF"),
}
INDICATOR_SEED_INDEX = {"i_lim": 0, "r_o2_total": 1, "ecsa": 2, "c_rem": 3}

DEFAULT_GRIDS = {
    "IV": GridSpec(0.0, 3.1, 20),
    "CV": GridSpec(0.051, 0.4, 100),
}

_DELTA_ATTR = {"DeltaVI": "delta_vi", "DeltaIV": "delta_iv", "DeltaReF": "delta_re", "DeltaImF": "delta_im"}


# ---------------------------------------------------------------- difference curves


@dataclass(frozen=True)
class DifferenceCurveSet:
    delta_vi: Optional[SampledCurve] = None
    delta_iv: Optional[SampledCurve] = None
    delta_re: Optional[SampledCurve] = None
    delta_im: Optional[SampledCurve] = None

    def get(self, kind: str) -> Optional[SampledCurve]:
        return getattr(self, _DELTA_ATTR[kind])

    def present(self) -> tuple:
        return tuple(k for k in _DELTA_ATTR if self.get(k) is not None)


def _std(curve: SampledCurve, grid: GridSpec) -> np.ndarray:
    return np.asarray(resample_curve(curve, grid).y)


def build_difference_curves(t1: CheckUp, t2: CheckUp, grids: dict = None) -> DifferenceCurveSet:
    """Standardized T2 - T1 differences; the CV difference is T1 - T2.

    EIS is subtracted on its measured frequencies, which must coincide.
    Curves missing at either stage give a missing difference.
    """
    grids = DEFAULT_GRIDS if grids is None else grids
    out = {}
    if t1.iv is not None and t2.iv is not None:
        g = grids["IV"]
        out["delta_vi"] = SampledCurve(CurveKind.DeltaVI, g.points(), _std(t2.iv, g) - _std(t1.iv, g))
    else:
        log.debug("no I-V difference: curve missing at %s or %s", t1.stage_id, t2.stage_id)
    if t1.cv is not None and t2.cv is not None:
        g = grids["CV"]
        out["delta_iv"] = SampledCurve(CurveKind.DeltaIV, g.points(), _std(t1.cv, g) - _std(t2.cv, g))
    else:
        log.debug("no CV difference: curve missing at %s or %s", t1.stage_id, t2.stage_id)
    if t1.eis is not None and t2.eis is not None:
        f1, f2 = np.asarray(t1.eis.frequencies_hz), np.asarray(t2.eis.frequencies_hz)
        if not np.array_equal(f1, f2):
            raise FrequencyGridMismatch(
                f"EIS grids differ between {t1.stage_id} ({len(f1)} points) and {t2.stage_id} ({len(f2)})")
        out["delta_re"] = SampledCurve(CurveKind.DeltaReF, f1, np.asarray(t2.eis.re) - np.asarray(t1.eis.re))
        out["delta_im"] = SampledCurve(CurveKind.DeltaImF, f1, np.asarray(t2.eis.im) - np.asarray(t1.eis.im))
    return DifferenceCurveSet(**out)


# ---------------------------------------------------------------- config & bundle


def _selector_to_json(s):
    return s if isinstance(s, str) else float(s)


def stage_spec_to_dict(spec: StageSpec) -> dict:
    return {k: _selector_to_json(getattr(spec, k)) for k in ("t1", "t2", "t3")}


def stage_spec_from_dict(d) -> StageSpec:
    return StageSpec(d["t1"], d["t2"], d["t3"])


@dataclass(frozen=True)
class LpAltConfig:
    stages: StageSpec
    indicators: tuple = ("i_lim", "r_o2_total", "ecsa")
    sisso: SissoConfig = field(default_factory=SissoConfig)
    tuning: ForestTuning = field(default_factory=ForestTuning)
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "indicators", tuple(self.indicators))
        unknown = set(self.indicators) - set(INDICATOR_FEATURES)
        if unknown or not self.indicators:
            raise ConfigError(f"indicators must be a nonempty subset of {sorted(INDICATOR_FEATURES)}")

    def to_dict(self) -> dict:
        return {
            "stages": stage_spec_to_dict(self.stages),
            "indicators": list(self.indicators),
            "sisso": self.sisso.to_dict(),
            "tuning": self.tuning.to_dict(),
            "grids": {k: g.to_dict() for k, g in self.grids.items()},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d, threads: int = 1) -> "LpAltConfig":
        reject_unknown_keys(d, ("stages", "indicators", "sisso", "tuning", "grids", "seed"), "lpalt config")
        if "stages" not in d:
            raise ConfigError("lpalt config needs 'stages'")
        grids = dict(DEFAULT_GRIDS)
        grids.update({k: GridSpec.from_dict(g) for k, g in d.get("grids", {}).items()})
        return cls(
            stages=stage_spec_from_dict(d["stages"]),
            indicators=tuple(d.get("indicators", ("i_lim", "r_o2_total", "ecsa"))),
            sisso=SissoConfig.from_dict(d["sisso"]) if "sisso" in d else SissoConfig(),
            tuning=ForestTuning.from_dict(d["tuning"]) if "tuning" in d else ForestTuning(),
            grids=grids,
            seed=int(d.get("seed", 0)),
            threads=threads,
        )


@dataclass(frozen=True, eq=False)
class IndicatorModel:
    indicator: str
    formulas: tuple            # one FeatureFormula per feature curve, in INDICATOR_FEATURES order
    forest: MultiTargetForest  # formula values -> indicator change T3 - T1

    def features(self, deltas: DifferenceCurveSet) -> np.ndarray:
        row = []
        for kind, formula in zip(INDICATOR_FEATURES[self.indicator], self.formulas):
            curve = deltas.get(kind)
            if curve is None:
                raise NoMatch(f"{self.indicator} needs a {kind} difference curve")
            formula.grid.check(curve)
            row.append(float(formula.values(np.asarray(curve.y))[0]))
        return np.array(row)


@dataclass(frozen=True, eq=False)
class LpAltModelBundle:
    config: LpAltConfig
    models: dict               # indicator -> IndicatorModel
    info: dict

    def model(self, indicator: str) -> IndicatorModel:
        if indicator not in self.models:
            raise ModelMissing(f"bundle has no {indicator} model")
        return self.models[indicator]

    def summary(self) -> dict:
        def brief(i):
            return {k: v for k, v in i.items() if k != "cv_table"}

        return {
            "version": BUNDLE_VERSION,
            "stages": stage_spec_to_dict(self.config.stages),
            "grids": {k: g.to_dict() for k, g in self.config.grids.items()},
            "formulas": {ind: [f.expression for f in m.formulas] for ind, m in self.models.items()},
            "models": {k: brief(v) for k, v in self.info.items()},
            "config": self.config.to_dict(),
        }


# ---------------------------------------------------------------- training


def _device_rows(devices: Sequence[LifeTest], config: LpAltConfig):
    """Yield (device, t1, t3, deltas) for devices whose stages resolve."""
    for lt in devices:
        try:
            c1, c2, c3 = resolve_stages(lt, config.stages)
        except NoMatch as exc:
            log.warning("skipping %s: %s", lt.device_id, exc)
            continue
        try:
            deltas = build_difference_curves(c1, c2, config.grids)
        except GridOutOfDomain as exc:
            log.warning("skipping %s: %s", lt.device_id, exc)
            continue
        yield lt, c1, c3, deltas


def train_lpalt(train: Sequence[LifeTest], config: LpAltConfig) -> LpAltModelBundle:
    rows = list(_device_rows(train, config))
    models, info = {}, {}
    for ind in config.indicators:
        kinds = INDICATOR_FEATURES[ind]
        curves, target = {k: [] for k in kinds}, []
        skipped = 0
        for lt, c1, c3, deltas in rows:
            v1, v3 = c1.indicators.get(ind), c3.indicators.get(ind)
            if v1 is None or v3 is None or any(deltas.get(k) is None for k in kinds):
                skipped += 1
                continue
            for k in kinds:
                curves[k].append(deltas.get(k))
            target.append(v3 - v1)
        if skipped:
            log.info("%s: excluded %d devices lacking curves or indicators", ind, skipped)
        if not target:
            log.warning("%s model absent: no usable training devices", ind)
            info[ind] = {"absent": True, "excluded": skipped}
            continue
        target = np.array(target)
        formulas, X = [], []
        for k in kinds:
            formula = fit_descriptor(curves[k], target, config.sisso)
            formulas.append(formula)
            X.append(formula.values(np.array([c.y for c in curves[k]])))
        X = np.column_stack(X)
        forest, i = tune_and_fit(X, target, config.tuning,
                                 derive_seed(config.seed, INDICATOR_SEED_INDEX[ind]),
                                 n_jobs=config.threads)
        i.update(excluded=skipped, formulas=[f.to_dict() for f in formulas],
                 n_candidates={k: len(curves[k][0].x) * (len(curves[k][0].x) - 1) // 2 for k in kinds})
        models[ind] = IndicatorModel(ind, tuple(formulas), forest)
        info[ind] = i
    if not models:
        raise NoTrainingRows("no indicator model could be trained")
    return LpAltModelBundle(config, models, info)


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True)
class LpAltPrediction:
    device_id: str
    t3: AgingIndicators        # T1 value + predicted change
    delta: dict                # indicator -> reported change, equal to t3 - t1
    t1: dict                   # indicator -> measured T1 value
    features: dict             # indicator -> descriptor values


def predict_lpalt(bundle: LpAltModelBundle, device: LifeTest) -> LpAltPrediction:
    spec = bundle.config.stages
    c1 = resolve_stage(device, spec.t1)
    c2 = resolve_stage(device, spec.t2)
    deltas = build_difference_curves(c1, c2, bundle.config.grids)
    t3, delta, t1, feats = {}, {}, {}, {}
    for ind, model in bundle.models.items():
        v1 = c1.indicators.get(ind)
        if v1 is None:
            raise MissingT1Indicator(f"{device.device_id}: {ind} missing at {c1.stage_id}")
        x = model.features(deltas)
        d_hat = float(model.forest.predict(x[None, :])[0, 0])
        value = v1 + d_hat
        t3[ind] = value
        delta[ind] = value - v1
        t1[ind] = v1
        feats[ind] = x.tolist()
    return LpAltPrediction(device.device_id, AgingIndicators(**t3), delta, t1, feats)


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True, eq=False)
class LpAltEvaluation:
    rows: tuple                # dicts: indicator, quantity, n_devices, metrics
    pairs: dict = field(repr=False)   # (indicator, quantity) -> (y_true, y_pred, device ids)

    def metrics(self, indicator: str, quantity: str = "t3"):
        for r in self.rows:
            if r["indicator"] == indicator and r["quantity"] == quantity:
                return r["metrics"]
        raise KeyError((indicator, quantity))

    def to_dict(self) -> dict:
        return {"rows": [{**{k: v for k, v in r.items() if k != "metrics"},
                          "metrics": r["metrics"].to_dict()} for r in self.rows]}


def evaluate_lpalt(bundle: LpAltModelBundle, test: Sequence[LifeTest]) -> LpAltEvaluation:
    """T3 and change metrics per indicator on devices with ground truth."""
    pairs = {}
    for lt in test:
        try:
            c3 = resolve_stage(lt, bundle.config.stages.t3)
        except NoMatch:
            continue
        pred = predict_lpalt(bundle, lt)
        for ind in bundle.models:
            truth = c3.indicators.get(ind)
            if truth is None:
                continue
            for q, yt, yp in (("t3", truth, pred.t3.get(ind)),
                              ("delta", truth - pred.t1[ind], pred.delta[ind])):
                pairs.setdefault((ind, q), ([], [], []))
                pairs[(ind, q)][0].append(yt)
                pairs[(ind, q)][1].append(yp)
                pairs[(ind, q)][2].append(lt.device_id)
    if not pairs:
        raise NoGroundTruth("no test device has the T3 indicators")
    rows = []
    for (ind, q), (yt, yp, ids) in pairs.items():
        m = compute_metrics(yt, yp, unit=INDICATOR_UNITS[ind], mape=(q == "t3"), strict=False)
        rows.append({"indicator": ind, "quantity": q, "n_devices": len(yt), "metrics": m})
    arr = {k: (np.array(a), np.array(b), tuple(c)) for k, (a, b, c) in pairs.items()}
    return LpAltEvaluation(tuple(rows), arr)


def acceleration_report(stages: StageSpec, horizon: float, metrics: Optional[dict] = None,
                        reference: Optional[LifeTest] = None) -> dict:
    """Full-test horizon over the T2 stage time.

    Stage selectors given as ids are resolved against ``reference``.
    """
    times = {}
    for k in ("t1", "t2", "t3"):
        sel = getattr(stages, k)
        if isinstance(sel, str):
            if reference is None:
                raise ConfigError(f"stage {k} is an id ({sel!r}); a reference device is needed")
            times[k] = resolve_stage(reference, sel).stage_time
        else:
            times[k] = float(sel)
    if times["t2"] <= 0:
        raise ZeroT2Time(f"T2 stage time is {times['t2']}")
    return {
        "t1_time": times["t1"],
        "t2_time": times["t2"],
        "t3_time": times["t3"],
        "horizon": float(horizon),
        "ratio": float(horizon) / times["t2"],
        "metrics": metrics or {},
    }


# ---------------------------------------------------------------- persistence


def save_lpalt_bundle(bundle: LpAltModelBundle, path) -> Path:
    path = Path(path)
    forests, models = {}, {}
    for ind, m in bundle.models.items():
        for c, f in enumerate(m.forest.forests):
            forests[f"{ind}/{c}"] = f
        models[ind] = {"formulas": [f.to_dict() for f in m.formulas],
                       "n_features": m.forest.n_features, "n_targets": m.forest.n_targets}
    meta = {"version": BUNDLE_VERSION, "config": bundle.config.to_dict(), "models": models}
    save_archive(path, forests, meta)
    (path / "training.json").write_text(json.dumps(bundle.info, indent=1, sort_keys=True) + "\n")
    (path / "summary.json").write_text(json.dumps(bundle.summary(), indent=2, sort_keys=True) + "\n")
    return path


def load_lpalt_bundle(path, threads: int = 1) -> LpAltModelBundle:
    path = Path(path)
    forests, meta = load_archive(path)
    if meta.get("version") != BUNDLE_VERSION:
        raise SchemaError(f"{path}: not an LP-ALT bundle ({meta.get('version')!r})")
    models = {}
    for ind, spec in meta["models"].items():
        fs = tuple(forests[f"{ind}/{c}"] for c in range(spec["n_targets"]))
        formulas = tuple(FeatureFormula.from_dict(d) for d in spec["formulas"])
        models[ind] = IndicatorModel(ind, formulas, MultiTargetForest(fs, spec["n_features"]))
    info_path = path / "training.json"
    info = json.loads(info_path.read_text()) if info_path.exists() else {}
    return LpAltModelBundle(LpAltConfig.from_dict(meta["config"], threads=threads), models, info)
