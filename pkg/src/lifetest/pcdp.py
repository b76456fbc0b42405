"""Reconstruction of characterization data from four probe impedances.

Pipeline:

1. pick a medium and a high preset frequency by clustering the training
   Re/f curves;
2. predict the full mid-high-band spectrum from (Re, Im) at those two
   frequencies;
3. predict the I-V, CV and LSV curves from the spectrum, and the aging
   indicators from the curves.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    FrequencyGridMismatch,
    FrequencyMissing,
    GridOutOfDomain,
    InsufficientRange,
    ModelMissing,
    NoGroundTruth,
    NoTrainingRows,
    SchemaError,
    reject_unknown_keys,
)
from .forest import ForestTuning, MultiTargetForest, derive_seed, load_archive, save_archive, tune_and_fit
from .model import CURVE_UNITS, EIS_UNIT, INDICATOR_UNITS, AgingIndicators, CheckUp, CurveKind, EisSpectrum, SampledCurve
from .numerics import GridSpec, MetricsReport, compute_metrics, kmeans, resample_curve

log = logging.getLogger(__name__)

BUNDLE_VERSION = "lifetest-pcdp-bundle/1"
BAND = (1.0, 1.0e4)
MEDIUM_BAND = (1.0, 100.0)
HIGH_BAND = (100.0, 1.0e4)
FREQ_RTOL = 1e-6

CURVES = ("IV", "CV", "LSV")
# indicator -> the characterization signal it is read from
INDICATOR_SOURCES = {"r_o2_total": "EIS", "i_lim": "IV", "ecsa": "CV", "i_cross": "LSV"}
# fixed child-seed index of every model in the bundle
MODEL_SEED_INDEX = {"EIS": 0, "IV": 1, "CV": 2, "LSV": 3,
                    "r_o2_total": 4, "i_lim": 5, "ecsa": 6, "i_cross": 7}

DEFAULT_GRIDS = {
    "IV": GridSpec(0.0, 3.1, 20),
    "CV": GridSpec(0.051, 0.4, 100),
    "LSV": GridSpec(0.1, 0.5, 100),
}


# ---------------------------------------------------------------- step 1


@dataclass(frozen=True)
class PresetFrequencies:
    f_medium: float
    f_high: float
    votes: tuple = ()       # ((f_medium, f_high), count), most common first

    def to_dict(self) -> dict:
        return {"f_medium": self.f_medium, "f_high": self.f_high,
                "votes": [[m, h, c] for (m, h), c in self.votes]}

    @classmethod
    def from_dict(cls, d) -> "PresetFrequencies":
        return cls(float(d["f_medium"]), float(d["f_high"]),
                   tuple(((float(m), float(h)), int(c)) for m, h, c in d.get("votes", [])))


def _snap(mean_f: float, grid: np.ndarray, band: tuple) -> float:
    inside = grid[(grid >= band[0]) & (grid <= band[1])]
    if len(inside) == 0:
        raise InsufficientRange(f"no measured frequency in [{band[0]}, {band[1]}] Hz")
    return float(inside[np.argmin(np.abs(inside - mean_f))])


def curve_frequency_pair(eis: EisSpectrum, seed: int = 0, band: tuple = BAND,
                         log_frequency: bool = True, zscore: bool = True) -> tuple:
    """Cluster one Re/f curve into two groups and snap each group's mean
    frequency to the measured grid; returns ``(f_medium, f_high)``."""
    f_all = np.asarray(eis.frequencies_hz)
    if len(f_all) == 0 or f_all.min() > band[0] * (1 + FREQ_RTOL) or f_all.max() < band[1] * (1 - FREQ_RTOL):
        raise InsufficientRange(f"spectrum does not cover [{band[0]}, {band[1]}] Hz")
    lo, hi = band[0] * (1 - FREQ_RTOL), band[1] * (1 + FREQ_RTOL)
    mask = (f_all >= lo) & (f_all <= hi)
    f = f_all[mask]
    re = np.asarray(eis.re)[mask]
    if len(f) < 2:
        raise InsufficientRange("fewer than two frequencies inside the band")
    fx = np.log10(f) if log_frequency else f
    if zscore:
        sd = re.std()
        rz = (re - re.mean()) / sd if sd > 0 else np.zeros_like(re)
    else:
        rz = re
    cl = kmeans(np.column_stack([fx, rz]), 2, seed=seed)
    means = []
    for j in range(2):
        members = cl.assignments == j
        if not members.any():
            raise InsufficientRange("clustering produced an empty group")
        means.append((float(np.mean(np.log10(f[members]))), float(np.mean(f[members]))))
    means.sort()
    f_med = _snap(means[0][1], f, MEDIUM_BAND)
    f_high = _snap(means[1][1], f, HIGH_BAND)
    return f_med, f_high


def select_preset_frequencies(spectra: Sequence[EisSpectrum], seed: int = 0, band: tuple = BAND,
                              log_frequency: bool = True, zscore: bool = True) -> PresetFrequencies:
    """Most frequent per-curve pair; ties go to the lower medium frequency."""
    if not spectra:
        raise NoTrainingRows("frequency selection needs at least one spectrum")
    pairs = [curve_frequency_pair(s, seed, band, log_frequency, zscore) for s in spectra]
    counts = Counter(pairs)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0][0], kv[0][1]))
    (f_med, f_high), _ = ranked[0]
    return PresetFrequencies(f_med, f_high, tuple(ranked))


@dataclass(frozen=True)
class ProbeVector:
    re1: float
    im1: float
    re2: float
    im2: float

    def array(self) -> np.ndarray:
        return np.array([self.re1, self.im1, self.re2, self.im2])


def _lookup(freqs: np.ndarray, target: float) -> int:
    hit = np.flatnonzero(np.abs(freqs - target) <= FREQ_RTOL * abs(target))
    if len(hit) == 0:
        raise FrequencyMissing(f"{target} Hz not in the measured spectrum")
    return int(hit[np.argmin(np.abs(freqs[hit] - target))])


def probe_impedances(eis: EisSpectrum, pf: PresetFrequencies) -> ProbeVector:
    f = np.asarray(eis.frequencies_hz)
    i1, i2 = _lookup(f, pf.f_medium), _lookup(f, pf.f_high)
    return ProbeVector(float(eis.re[i1]), float(eis.im[i1]), float(eis.re[i2]), float(eis.im[i2]))


# ---------------------------------------------------------------- config & bundle


@dataclass(frozen=True)
class PcdpConfig:
    seed: int = 0
    tuning: ForestTuning = field(default_factory=ForestTuning)
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))
    band: tuple = BAND
    indicator_training_source: str = "measured"     # or "predicted"
    cluster_log_frequency: bool = True
    cluster_zscore: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.indicator_training_source not in ("measured", "predicted"):
            raise ConfigError("indicator_training_source must be 'measured' or 'predicted'")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "tuning": self.tuning.to_dict(),
            "grids": {k: g.to_dict() for k, g in self.grids.items()},
            "band": list(self.band),
            "indicator_training_source": self.indicator_training_source,
            "cluster_log_frequency": self.cluster_log_frequency,
            "cluster_zscore": self.cluster_zscore,
        }

    @classmethod
    def from_dict(cls, d, threads: int = 1) -> "PcdpConfig":
        reject_unknown_keys(d, cls().to_dict(), "pcdp config")
        grids = dict(DEFAULT_GRIDS)
        grids.update({k: GridSpec.from_dict(g) for k, g in d.get("grids", {}).items()})
        return cls(
            seed=int(d.get("seed", 0)),
            tuning=ForestTuning.from_dict(d["tuning"]) if "tuning" in d else ForestTuning(),
            grids=grids,
            band=tuple(d.get("band", BAND)),
            indicator_training_source=d.get("indicator_training_source", "measured"),
            cluster_log_frequency=d.get("cluster_log_frequency", True),
            cluster_zscore=d.get("cluster_zscore", True),
            threads=threads,
        )


@dataclass(frozen=True, eq=False)
class PcdpModelBundle:
    config: PcdpConfig
    preset: PresetFrequencies
    frequencies_hz: np.ndarray
    eis_model: MultiTargetForest
    curve_models: dict                  # "IV" -> MultiTargetForest
    indicator_models: dict              # ("ecsa", "CV") -> MultiTargetForest
    info: dict                          # per-model training record

    @property
    def n_eis_targets(self) -> int:
        return 2 * len(self.frequencies_hz)

    def curve_model(self, kind: str) -> MultiTargetForest:
        if kind not in self.curve_models:
            raise ModelMissing(f"bundle has no {kind} curve model")
        return self.curve_models[kind]

    def indicator_model(self, name: str) -> MultiTargetForest:
        key = (name, INDICATOR_SOURCES[name])
        if key not in self.indicator_models:
            raise ModelMissing(f"bundle has no {name} model")
        return self.indicator_models[key]

    def summary(self) -> dict:
        def brief(i):
            return {k: v for k, v in i.items() if k != "cv_table"}

        return {
            "version": BUNDLE_VERSION,
            "preset_frequencies": self.preset.to_dict(),
            "frequencies_hz": self.frequencies_hz.tolist(),
            "grids": {k: g.to_dict() for k, g in self.config.grids.items()},
            "models": {k: brief(v) for k, v in self.info.items()},
            "config": self.config.to_dict(),
        }


# ---------------------------------------------------------------- features


def _band_vector(eis: EisSpectrum, freqs: np.ndarray) -> np.ndarray:
    f = np.asarray(eis.frequencies_hz)
    idx = [_lookup(f, v) for v in freqs]
    return np.concatenate([np.asarray(eis.re)[idx], np.asarray(eis.im)[idx]])


def _band_grid(spectra: Sequence[EisSpectrum], band: tuple) -> np.ndarray:
    lo, hi = band[0] * (1 - FREQ_RTOL), band[1] * (1 + FREQ_RTOL)
    ref = None
    for s in spectra:
        f = np.asarray(s.frequencies_hz)
        f = f[(f >= lo) & (f <= hi)]
        if ref is None:
            ref = f
        elif len(f) != len(ref) or np.any(np.abs(f - ref) > FREQ_RTOL * ref):
            raise FrequencyGridMismatch("training spectra do not share one frequency grid in the band")
    return np.array(ref, dtype=float)


def _curve_vector(curve: Optional[SampledCurve], grid: GridSpec) -> Optional[np.ndarray]:
    if curve is None:
        return None
    try:
        return np.asarray(resample_curve(curve, grid).y)
    except GridOutOfDomain as exc:
        log.warning("skipping %s curve: %s", curve.kind.value, exc)
        return None


def _curve_kind_getter(cu: CheckUp, kind: str):
    return getattr(cu, kind.lower())


# ---------------------------------------------------------------- training


def _fit(name: str, X, Y, config: PcdpConfig) -> tuple:
    seed = derive_seed(config.seed, MODEL_SEED_INDEX[name])
    return tune_and_fit(X, Y, config.tuning, seed, n_jobs=config.threads)


def train_pcdp(train: Sequence[CheckUp], config: PcdpConfig = PcdpConfig()) -> PcdpModelBundle:
    rows = [cu for cu in train if cu.eis is not None]
    if not rows:
        raise NoTrainingRows("no training check-up carries EIS")
    if len(rows) < len(train):
        log.info("EIS model: skipped %d check-ups without EIS", len(train) - len(rows))
    spectra = [cu.eis for cu in rows]
    freqs = _band_grid(spectra, config.band)
    preset = select_preset_frequencies(spectra, config.seed, config.band,
                                       config.cluster_log_frequency, config.cluster_zscore)
    P = np.array([probe_impedances(s, preset).array() for s in spectra])
    E = np.array([_band_vector(s, freqs) for s in spectra])

    jobs = {"EIS": (P, E)}
    curve_rows = {}
    for kind in CURVES:
        vecs = [(i, _curve_vector(_curve_kind_getter(cu, kind), config.grids[kind]))
                for i, cu in enumerate(rows)]
        vecs = [(i, v) for i, v in vecs if v is not None]
        log.info("%s model: %d of %d check-ups usable", kind, len(vecs), len(rows))
        curve_rows[kind] = vecs
        if vecs:
            jobs[kind] = (E[[i for i, _ in vecs]], np.array([v for _, v in vecs]))

    def run(name):
        X, Y = jobs[name]
        return name, _fit(name, X, Y, config)

    info = {}
    fitted = {}
    # models are independent; forests inside already use the thread budget
    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=min(config.threads, len(jobs))) as ex:
            results = list(ex.map(run, list(jobs)))
    else:
        results = [run(n) for n in jobs]
    for name, (model, i) in results:
        fitted[name] = model
        info[name] = i
    eis_model = fitted.pop("EIS")
    curve_models = fitted
    for kind in CURVES:
        if kind not in curve_models:
            log.warning("%s model absent: no training rows", kind)
            info[kind] = {"absent": True}

    # indicator models
    indicator_models = {}
    E_hat = None
    if config.indicator_training_source == "predicted":
        E_hat = eis_model.predict(P)
    for name, source in INDICATOR_SOURCES.items():
        X_rows, y_rows = [], []
        for i, cu in enumerate(rows):
            value = cu.indicators.get(name)
            if value is None:
                continue
            if source == "EIS":
                x = E[i] if E_hat is None else E_hat[i]
            elif config.indicator_training_source == "measured":
                x = _curve_vector(_curve_kind_getter(cu, source), config.grids[source])
            else:
                if source not in curve_models:
                    x = None
                else:
                    x = curve_models[source].predict(E_hat[i][None, :])[0]
            if x is None:
                continue
            X_rows.append(x)
            y_rows.append(value)
        key = f"{name}:{source}"
        if not X_rows:
            log.warning("%s model absent: no rows with %s and the indicator", name, source)
            info[key] = {"absent": True}
            continue
        model, i = _fit(name, np.array(X_rows), np.array(y_rows), config)
        i["training_source"] = config.indicator_training_source
        indicator_models[(name, source)] = model
        info[key] = i

    return PcdpModelBundle(config, preset, freqs, eis_model, curve_models, indicator_models, info)


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True, eq=False)
class PcdpPrediction:
    eis: EisSpectrum
    curves: dict                        # kind -> SampledCurve
    indicators: AgingIndicators
    provenance: dict                    # output name -> "predicted"


def _check_dim(model: MultiTargetForest, n_in: int, n_out: int, what: str):
    if model.n_features != n_in or model.n_targets != n_out:
        raise DimensionMismatch(f"{what} model is {model.n_features}->{model.n_targets}, "
                                f"expected {n_in}->{n_out}")


def predict_eis(bundle: PcdpModelBundle, probes) -> np.ndarray:
    P = np.atleast_2d(np.asarray(probes, dtype=float))
    _check_dim(bundle.eis_model, 4, bundle.n_eis_targets, "EIS")
    return bundle.eis_model.predict(P)


def predict_curves(bundle: PcdpModelBundle, kind: str, eis_vectors) -> np.ndarray:
    model = bundle.curve_model(kind)
    _check_dim(model, bundle.n_eis_targets, bundle.config.grids[kind].n_points, kind)
    return model.predict(np.atleast_2d(eis_vectors))


def predict_indicator(bundle: PcdpModelBundle, name: str, source_vectors) -> np.ndarray:
    return bundle.indicator_model(name).predict(np.atleast_2d(source_vectors))[:, 0]


def predict_pcdp_batch(bundle: PcdpModelBundle, probes) -> list:
    """Chained prediction for many probe vectors.  Outputs whose model is
    missing from the bundle are left out."""
    P = np.atleast_2d(np.asarray([p.array() if isinstance(p, ProbeVector) else p for p in probes],
                                 dtype=float))
    E = predict_eis(bundle, P)
    curves = {k: predict_curves(bundle, k, E) for k in CURVES if k in bundle.curve_models}
    inds = {}
    for name, source in INDICATOR_SOURCES.items():
        if (name, source) not in bundle.indicator_models:
            continue
        if source == "EIS":
            inds[name] = predict_indicator(bundle, name, E)
        elif source in curves:
            inds[name] = predict_indicator(bundle, name, curves[source])
    nf = len(bundle.frequencies_hz)
    out = []
    for r in range(len(P)):
        eis = EisSpectrum(bundle.frequencies_hz, E[r, :nf], E[r, nf:], EIS_UNIT)
        cs = {k: SampledCurve(CurveKind(k), bundle.config.grids[k].points(), v[r])
              for k, v in curves.items()}
        ind = AgingIndicators(**{n: float(v[r]) for n, v in inds.items()})
        prov = {"EIS": "predicted", **{k: "predicted" for k in cs}, **{n: "predicted" for n in inds}}
        out.append(PcdpPrediction(eis, cs, ind, prov))
    return out


def predict_pcdp(bundle: PcdpModelBundle, probe: ProbeVector) -> PcdpPrediction:
    if not bundle.curve_models and not bundle.indicator_models:
        log.info("bundle holds the EIS model only")
    return predict_pcdp_batch(bundle, [probe])[0]


# ---------------------------------------------------------------- evaluation


@dataclass(frozen=True, eq=False)
class PcdpEvaluation:
    rows: tuple                          # dicts: output, source, n_checkups, metrics
    pairs: dict = field(repr=False)      # (output, source) -> (y_true, y_pred)

    def metrics(self, output: str, source: str = "predicted") -> MetricsReport:
        for r in self.rows:
            if r["output"] == output and r["source"] == source:
                return r["metrics"]
        raise KeyError((output, source))

    def to_dict(self) -> dict:
        return {"rows": [{**{k: v for k, v in r.items() if k != "metrics"},
                          "metrics": r["metrics"].to_dict()} for r in self.rows]}


def evaluate_pcdp(bundle: PcdpModelBundle, test: Sequence[CheckUp]) -> PcdpEvaluation:
    """Metrics for every output with ground truth in ``test``.

    Curves and indicators are scored twice: fed by measured inputs and by the
    chained predictions.
    """
    rows = [cu for cu in test if cu.eis is not None]
    if not rows:
        raise NoGroundTruth("no test check-up carries EIS")
    freqs = bundle.frequencies_hz
    P = np.array([probe_impedances(cu.eis, bundle.preset).array() for cu in rows])
    E = np.array([_band_vector(cu.eis, freqs) for cu in rows])
    E_hat = predict_eis(bundle, P)
    pairs = {("EIS", "predicted"): (E, E_hat)}
    curve_hat = {}
    for kind in CURVES:
        if kind not in bundle.curve_models:
            continue
        curve_hat[kind] = predict_curves(bundle, kind, E_hat)
        truth = [(i, _curve_vector(_curve_kind_getter(cu, kind), bundle.config.grids[kind]))
                 for i, cu in enumerate(rows)]
        truth = [(i, v) for i, v in truth if v is not None]
        if not truth:
            continue
        idx = [i for i, _ in truth]
        Y = np.array([v for _, v in truth])
        pairs[(kind, "predicted")] = (Y, curve_hat[kind][idx])
        pairs[(kind, "measured")] = (Y, predict_curves(bundle, kind, E[idx]))
    for name, source in INDICATOR_SOURCES.items():
        if (name, source) not in bundle.indicator_models:
            continue
        meas_x, pred_x, y_true = [], [], []
        for i, cu in enumerate(rows):
            value = cu.indicators.get(name)
            if value is None:
                continue
            if source == "EIS":
                mx, px = E[i], E_hat[i]
            else:
                if source not in curve_hat:
                    continue
                mx = _curve_vector(_curve_kind_getter(cu, source), bundle.config.grids[source])
                px = curve_hat[source][i]
            y_true.append(value)
            pred_x.append(px)
            meas_x.append(mx)
        if not y_true:
            continue
        y_true = np.array(y_true)
        pairs[(name, "predicted")] = (y_true, predict_indicator(bundle, name, np.array(pred_x)))
        keep = [k for k, m in enumerate(meas_x) if m is not None]
        if keep:
            pairs[(name, "measured")] = (y_true[keep],
                                         predict_indicator(bundle, name, np.array([meas_x[k] for k in keep])))
    table = []
    for (output, source), (yt, yp) in pairs.items():
        unit = EIS_UNIT if output == "EIS" else (
            CURVE_UNITS[CurveKind(output)][1] if output in CURVES else INDICATOR_UNITS[output])
        m = compute_metrics(yt, yp, unit=unit, strict=False)
        table.append({"output": output, "source": source, "n_checkups": int(len(yt)), "metrics": m})
    return PcdpEvaluation(tuple(table), pairs)


# ---------------------------------------------------------------- persistence


def _forest_items(prefix: str, model: MultiTargetForest) -> dict:
    return {f"{prefix}/{c}": f for c, f in enumerate(model.forests)}


def save_pcdp_bundle(bundle: PcdpModelBundle, path) -> Path:
    path = Path(path)
    forests = _forest_items("EIS", bundle.eis_model)
    models = {"EIS": {"n_features": bundle.eis_model.n_features, "n_targets": bundle.eis_model.n_targets}}
    for kind, m in bundle.curve_models.items():
        forests.update(_forest_items(kind, m))
        models[kind] = {"n_features": m.n_features, "n_targets": m.n_targets}
    for (name, source), m in bundle.indicator_models.items():
        key = f"{name}:{source}"
        forests.update(_forest_items(key, m))
        models[key] = {"n_features": m.n_features, "n_targets": m.n_targets}
    meta = {
        "version": BUNDLE_VERSION,
        "config": bundle.config.to_dict(),
        "preset": bundle.preset.to_dict(),
        "frequencies_hz": bundle.frequencies_hz.tolist(),
        "models": models,
    }
    save_archive(path, forests, meta)
    (path / "training.json").write_text(json.dumps(bundle.info, indent=1, sort_keys=True) + "\n")
    (path / "summary.json").write_text(json.dumps(bundle.summary(), indent=2, sort_keys=True) + "\n")
    return path


def load_pcdp_bundle(path, threads: int = 1) -> PcdpModelBundle:
    path = Path(path)
    forests, meta = load_archive(path)
    if meta.get("version") != BUNDLE_VERSION:
        raise SchemaError(f"{path}: not a PCDP bundle ({meta.get('version')!r})")

    def gather(key):
        spec = meta["models"][key]
        fs = tuple(forests[f"{key}/{c}"] for c in range(spec["n_targets"]))
        return MultiTargetForest(fs, spec["n_features"])

    info_path = path / "training.json"
    info = json.loads(info_path.read_text()) if info_path.exists() else {}
    curve_models, indicator_models = {}, {}
    for key in meta["models"]:
        if key in CURVES:
            curve_models[key] = gather(key)
        elif ":" in key:
            name, source = key.split(":")
            indicator_models[(name, source)] = gather(key)
    return PcdpModelBundle(
        PcdpConfig.from_dict(meta["config"], threads=threads),
        PresetFrequencies.from_dict(meta["preset"]),
        np.array(meta["frequencies_hz"], dtype=float),
        gather("EIS"), curve_models, indicator_models, info,
    )
