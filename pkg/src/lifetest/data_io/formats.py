"""Canonical dataset format: one JSON manifest plus per-check-up CSV files.

Layout written by :func:`write_dataset`::

    manifest.json
    <device>/indicators.csv
    <device>/<NNN>_<stage>/eis.csv | iv.csv | cv.csv | lsv.csv

Numbers are written with ``repr`` so that loading reproduces every float
bit-for-bit.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from ..errors import ParseError, SchemaError, UnknownId, ValidationError
from ..model import (
    CURVE_UNITS,
    EIS_UNIT,
    INDICATOR_UNITS,
    AgingIndicators,
    CheckUp,
    CurveKind,
    EisSpectrum,
    LifeTest,
    SampledCurve,
    SplitSpec,
    validate_collection,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = "lifetest-dataset/1"

EIS_COLUMNS = ("frequency_hz", "re_mohm_cm2", "im_mohm_cm2")
CURVE_COLUMNS = {
    "iv": ("current_density_a_cm2", "voltage_v"),
    "cv": ("voltage_v", "current_density"),
    "lsv": ("voltage_v", "current_density"),
}
INDICATOR_COLUMNS = ("stage_id", "indicator", "value", "unit")

_UNIT_ALIASES = {
    "a/cm2": "A/cm2", "a/cm^2": "A/cm2", "a cm-2": "A/cm2", "a/cm²": "A/cm2",
    "ma/cm2": "mA/cm2", "ma/cm^2": "mA/cm2", "ma cm-2": "mA/cm2", "ma/cm²": "mA/cm2",
    "v": "V", "hz": "Hz",
    "mohm*cm2": "mOhm*cm2", "mohm cm2": "mOhm*cm2", "mohm·cm2": "mOhm*cm2", "mω·cm²": "mOhm*cm2",
    "ohm": "Ohm", "mohm": "mOhm",
    "s/m": "s/m", "uf": "uF", "µf": "uF", "μf": "uF",
    "cm2_pt/cm2_geo": "cm2_Pt/cm2_geo", "cm2pt/cm2geo": "cm2_Pt/cm2_geo",
}
_INDICATOR_SCALE = {("i_lim", "mA/cm2"): 1e-3, ("i_cross", "mA/cm2"): 1e-3}


def normalize_unit(unit: str) -> str:
    return _UNIT_ALIASES.get(unit.strip().lower(), unit.strip())


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name) or "_"


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def _read_csv(path: Path, header: Sequence[str]) -> list:
    """Read a numeric CSV with an exact header; returns one list per column."""
    if not path.exists():
        raise ParseError(path, "file not found")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            head = next(reader)
        except StopIteration:
            raise ParseError(path, "empty file (header row required)", 1)
        if [h.strip() for h in head] != list(header):
            raise SchemaError(f"{path}: header {head} does not match {list(header)}")
        cols = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(path, f"expected {len(header)} fields, got {len(row)}", lineno)
            for c, cell in enumerate(row):
                try:
                    cols[c].append(float(cell))
                except ValueError:
                    raise ParseError(path, f"not a number: {cell!r}", lineno, c + 1) from None
    return cols


# ---------------------------------------------------------------- writing


def _checkup_dir(lt: LifeTest, k: int, cu: CheckUp) -> str:
    return f"{_safe(lt.device_id)}/{k:03d}_{_safe(cu.stage_id)}"


def write_dataset(lifetests: Sequence[LifeTest], split: Optional[SplitSpec], path,
                  provenance: Sequence[str] = ()) -> Path:
    """Write ``lifetests`` under directory ``path``; returns the manifest path."""
    violations = validate_collection(lifetests)
    if violations:
        raise ValidationError(violations)
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    devices = []
    for lt in lifetests:
        entries = []
        ind_rows = []
        for k, cu in enumerate(lt.checkups):
            sub = _checkup_dir(lt, k, cu)
            files = {}
            if cu.eis is not None:
                e = cu.eis
                _write_csv(root / sub / "eis.csv", EIS_COLUMNS,
                           ((_fmt(a), _fmt(b), _fmt(c)) for a, b, c in zip(e.frequencies_hz, e.re, e.im)))
                files["eis"] = {"path": f"{sub}/eis.csv", "unit": e.unit}
            for name in ("iv", "cv", "lsv"):
                curve = getattr(cu, name)
                if curve is None:
                    continue
                _write_csv(root / sub / f"{name}.csv", CURVE_COLUMNS[name],
                           ((_fmt(a), _fmt(b)) for a, b in zip(curve.x, curve.y)))
                files[name] = {"path": f"{sub}/{name}.csv", "x_unit": curve.x_unit,
                               "y_unit": curve.y_unit}
            for ind, value in cu.indicators.present().items():
                ind_rows.append((cu.stage_id, ind, _fmt(value), INDICATOR_UNITS[ind]))
            entries.append({
                "stage_id": cu.stage_id,
                "stage_time": cu.stage_time,
                "time_unit": cu.time_unit,
                "conditions": dict(cu.conditions),
                "files": files,
            })
        ind_path = f"{_safe(lt.device_id)}/indicators.csv"
        _write_csv(root / ind_path, INDICATOR_COLUMNS, ind_rows)
        devices.append({
            "device_id": lt.device_id,
            "device_class": lt.device_class,
            "metadata": dict(lt.metadata),
            "indicators": ind_path,
            "checkups": entries,
        })
    classes = sorted({lt.device_class for lt in lifetests})
    manifest = {
        "format_version": FORMAT_VERSION,
        "device_class": classes[0] if len(classes) == 1 else ("mixed" if classes else None),
        "units": {
            "eis": EIS_UNIT,
            **{k.lower(): {"x": CURVE_UNITS[CurveKind(k)][0], "y": CURVE_UNITS[CurveKind(k)][1]}
               for k in ("IV", "CV", "LSV")},
            "indicators": dict(INDICATOR_UNITS),
        },
        "devices": devices,
        "split": None if split is None else split_to_dict(split),
        "provenance": list(provenance),
    }
    mpath = root / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return mpath


def split_to_dict(split: SplitSpec) -> dict:
    def ordered(ids):
        return sorted(ids, key=lambda v: (str(type(v)), v))

    return {
        "level": split.level,
        "train": ordered(split.train_ids),
        "test": ordered(split.test_ids),
        "exclusions": ordered(split.exclusions),
    }


def split_from_dict(d) -> SplitSpec:
    level = d.get("level", "device")
    conv = int if level == "checkup" else str
    return SplitSpec(frozenset(conv(v) for v in d.get("train", [])),
                     frozenset(conv(v) for v in d.get("test", [])),
                     frozenset(conv(v) for v in d.get("exclusions", [])), level)


# ---------------------------------------------------------------- loading


def _load_device(root: Path, dev: dict, units: dict) -> LifeTest:
    try:
        device_id = str(dev["device_id"])
        ind_by_stage = {}
        if dev.get("indicators"):
            ipath = root / dev["indicators"]
            if not ipath.exists():
                raise ParseError(ipath, "file not found")
            with open(ipath, newline="", encoding="utf-8") as fh:
                reader = csv.reader(fh)
                head = next(reader, None)
                if head is None or [h.strip() for h in head] != list(INDICATOR_COLUMNS):
                    raise SchemaError(f"{ipath}: header must be {list(INDICATOR_COLUMNS)}")
                for lineno, row in enumerate(reader, start=2):
                    if not row:
                        continue
                    if len(row) != 4:
                        raise ParseError(ipath, f"expected 4 fields, got {len(row)}", lineno)
                    stage, name, value, unit = row
                    if name not in INDICATOR_UNITS:
                        raise SchemaError(f"{ipath}:{lineno}: unknown indicator {name!r}")
                    try:
                        v = float(value)
                    except ValueError:
                        raise ParseError(ipath, f"not a number: {value!r}", lineno, 3) from None
                    unit = normalize_unit(unit)
                    if unit != INDICATOR_UNITS[name]:
                        scale = _INDICATOR_SCALE.get((name, unit))
                        if scale is None:
                            raise SchemaError(f"{ipath}:{lineno}: {name} in {unit!r}, "
                                              f"expected {INDICATOR_UNITS[name]!r}")
                        v *= scale
                    ind_by_stage.setdefault(stage, {})[name] = v
        checkups = []
        for entry in dev["checkups"]:
            files = entry.get("files", {})
            eis = iv = cv = lsv = None
            if "eis" in files:
                spec = files["eis"]
                p = root / spec["path"]
                f, re_, im = _read_csv(p, EIS_COLUMNS)
                eis = EisSpectrum(f, re_, im, normalize_unit(spec.get("unit", units.get("eis", EIS_UNIT))))
            curves = {}
            for name in ("iv", "cv", "lsv"):
                if name not in files:
                    continue
                spec = files[name]
                p = root / spec["path"]
                x, y = _read_csv(p, CURVE_COLUMNS[name])
                default = units.get(name, {})
                kind = CurveKind(name.upper())
                xu = normalize_unit(spec.get("x_unit", default.get("x", CURVE_UNITS[kind][0])))
                yu = normalize_unit(spec.get("y_unit", default.get("y", CURVE_UNITS[kind][1])))
                curves[name] = SampledCurve(kind, x, y, xu, yu)
            iv, cv, lsv = curves.get("iv"), curves.get("cv"), curves.get("lsv")
            stage_id = str(entry["stage_id"])
            checkups.append(CheckUp(
                stage_id=stage_id,
                stage_time=float(entry["stage_time"]),
                time_unit=entry.get("time_unit", "cycles"),
                eis=eis, iv=iv, cv=cv, lsv=lsv,
                indicators=AgingIndicators(**ind_by_stage.pop(stage_id, {})),
                conditions={k: float(v) for k, v in entry.get("conditions", {}).items()},
            ))
        if ind_by_stage:
            raise SchemaError(f"{device_id}: indicators for unknown stages {sorted(ind_by_stage)}")
        return LifeTest(device_id, dev.get("device_class", "PEMFC"), tuple(checkups),
                        dict(dev.get("metadata", {})))
    except KeyError as exc:
        raise SchemaError(f"device entry missing key {exc}") from None


def load_dataset(manifest_path, threads: int = 4) -> tuple:
    """Return ``(lifetests, split)``; ``split`` is ``None`` when absent."""
    mpath = Path(manifest_path)
    if not mpath.exists():
        raise ParseError(mpath, "manifest not found")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(mpath, exc.msg, exc.lineno, exc.colno) from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise SchemaError(f"{mpath}: unsupported format {manifest.get('format_version')!r}")
    root = mpath.parent
    units = manifest.get("units", {})
    devs = manifest.get("devices", [])
    if threads > 1 and len(devs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            lifetests = list(ex.map(lambda d: _load_device(root, d, units), devs))
    else:
        lifetests = [_load_device(root, d, units) for d in devs]
    violations = validate_collection(lifetests)
    if violations:
        raise ValidationError(violations)
    split = None
    if manifest.get("split"):
        split = split_from_dict(manifest["split"])
        _check_split_ids(lifetests, split)
    return lifetests, split


# ---------------------------------------------------------------- splitting


def _check_split_ids(lifetests, spec: SplitSpec):
    if spec.train_ids & spec.test_ids:
        raise SchemaError(f"train and test overlap: {sorted(spec.train_ids & spec.test_ids)}")
    if spec.exclusions & (spec.train_ids | spec.test_ids):
        raise SchemaError("exclusions overlap train/test")
    named = spec.train_ids | spec.test_ids | spec.exclusions
    if spec.level == "device":
        known = {lt.device_id for lt in lifetests}
    elif spec.level == "checkup":
        known = set()
        for lt in lifetests:
            known |= set(range(1, len(lt.checkups) + 1))
    else:
        raise SchemaError(f"unknown split level {spec.level!r}")
    missing = named - known
    if missing:
        raise UnknownId(f"split names unknown ids: {sorted(missing, key=str)}")


def split(lifetests: Sequence[LifeTest], spec: SplitSpec) -> tuple:
    """Return ``(train, test)`` lists of life tests; exclusions are dropped.

    At check-up level each device is cut into the check-ups whose 1-based
    position falls in the train or test set.
    """
    _check_split_ids(lifetests, spec)
    if spec.level == "device":
        train = [lt for lt in lifetests if lt.device_id in spec.train_ids]
        test = [lt for lt in lifetests if lt.device_id in spec.test_ids]
        return train, test
    train, test = [], []
    for lt in lifetests:
        tr = [c for k, c in enumerate(lt.checkups, 1) if k in spec.train_ids]
        te = [c for k, c in enumerate(lt.checkups, 1) if k in spec.test_ids]
        if tr:
            train.append(lt.with_checkups(tr))
        if te:
            test.append(lt.with_checkups(te))
    return train, test


def collections_equal(a: Sequence[LifeTest], b: Sequence[LifeTest]) -> bool:
    return len(a) == len(b) and all(x == y for x, y in zip(a, b))
