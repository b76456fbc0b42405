"""Configuration-driven conversion of raw public datasets.

The raw files are not vendored and their column layouts vary, so an adapter
config (JSON) names every file and maps its columns onto canonical ones::

    {
      "device_class": "PEMFC",
      "time_unit": "cycles",
      "split": {"preset": "pemfc", "id_format": "{n}"},
      "signals": {
        "eis": {"columns": {"frequency_hz": "f", "re": "Zre", "im": "Zim"},
                "scale": {"re": 1000.0, "im": 1000.0}, "negate_im": false},
        "iv":  {"columns": {"x": "j", "y": "U"}},
        "cv":  {"columns": {"x": "E", "y": "I"}, "loop": true, "scale": {"y": 1.0}}
      },
      "devices": [
        {"device_id": "1", "checkups": [
            {"stage_id": "0", "stage_time": 0, "eis": "cell1/eis_0.csv",
             "iv": "cell1/iv_0.csv", "indicators": {"ecsa": 61.2}}]}
      ]
    }

Paths are relative to the config file (or ``root`` when given).
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParseError, SchemaError
from ..model import (
    CURVE_UNITS,
    EIS_UNIT,
    AgingIndicators,
    CheckUp,
    CurveKind,
    EisSpectrum,
    LifeTest,
    SampledCurve,
    SplitSpec,
    cv_anodic_branch,
)
from .formats import normalize_unit, split_from_dict
from .splits import preset_split

log = logging.getLogger(__name__)


def read_columns(path: Path, columns: dict, delimiter: str = ",", skip_rows: int = 0) -> dict:
    """Read the named columns of a delimited text file as float arrays."""
    if not path.exists():
        raise ParseError(path, "file not found")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        for _ in range(skip_rows):
            fh.readline()
        reader = csv.reader(fh, delimiter=delimiter)
        head = next(reader, None)
        if head is None:
            raise ParseError(path, "missing header row", skip_rows + 1)
        head = [h.strip() for h in head]
        idx = {}
        for canon, src in columns.items():
            if src not in head:
                raise SchemaError(f"{path}: column {src!r} not in header {head}")
            idx[canon] = head.index(src)
        out = {k: [] for k in columns}
        for lineno, row in enumerate(reader, start=skip_rows + 2):
            if not row or all(not c.strip() for c in row):
                continue
            for canon, c in idx.items():
                try:
                    out[canon].append(float(row[c]))
                except (ValueError, IndexError):
                    cell = row[c] if c < len(row) else ""
                    raise ParseError(path, f"not a number: {cell!r}", lineno, c + 1) from None
    return {k: np.asarray(v, dtype=float) for k, v in out.items()}


def _signal(cfg: dict, name: str) -> dict:
    sig = cfg.get("signals", {}).get(name)
    if sig is None:
        raise ConfigError(f"check-up references {name} but no signals.{name} mapping is configured")
    return sig


def _read_signal(base: Path, rel: str, sig: dict) -> dict:
    cols = read_columns(base / rel, sig["columns"], sig.get("delimiter", ","), sig.get("skip_rows", 0))
    for k, s in sig.get("scale", {}).items():
        if k in cols:
            cols[k] = cols[k] * float(s)
    return cols


def _monotone(x, y):
    """Sort by x and keep the first sample of repeated x values."""
    order = np.argsort(x, kind="mergesort")
    x, y = x[order], y[order]
    keep = np.concatenate(([True], np.diff(x) > 0))
    return x[keep], y[keep]


def _eis(base, rel, sig) -> EisSpectrum:
    c = _read_signal(base, rel, sig)
    f, re, im = c["frequency_hz"], c["re"], c["im"]
    if sig.get("negate_im", False):
        im = -im
    f, idx = _monotone(f, np.arange(len(f)))
    idx = idx.astype(int)
    return EisSpectrum(f, re[idx], im[idx], normalize_unit(sig.get("unit", EIS_UNIT)))


def _curve(base, rel, sig, kind: CurveKind) -> SampledCurve:
    c = _read_signal(base, rel, sig)
    xu = normalize_unit(sig.get("x_unit", CURVE_UNITS[kind][0]))
    yu = normalize_unit(sig.get("y_unit", CURVE_UNITS[kind][1]))
    if kind is CurveKind.CV and sig.get("loop", False):
        return cv_anodic_branch(c["x"], c["y"], yu)
    x, y = _monotone(c["x"], c["y"])
    return SampledCurve(kind, x, y, xu, yu)


def ingest(config_path) -> tuple:
    """Convert a raw dataset described by an adapter config.

    Returns ``(lifetests, split, provenance)``.
    """
    cpath = Path(config_path)
    try:
        cfg = json.loads(cpath.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError(cpath, "adapter config not found") from None
    except json.JSONDecodeError as exc:
        raise ParseError(cpath, exc.msg, exc.lineno, exc.colno) from exc
    base = cpath.parent / cfg.get("root", ".")
    device_class = cfg.get("device_class", "PEMFC")
    time_unit = cfg.get("time_unit", "cycles")
    provenance = [f"converted from {cpath.name}"]

    lifetests = []
    for dev in cfg.get("devices", []):
        checkups = []
        for cu in dev.get("checkups", []):
            eis = _eis(base, cu["eis"], _signal(cfg, "eis")) if cu.get("eis") else None
            curves = {}
            for name in ("iv", "cv", "lsv"):
                if cu.get(name):
                    curves[name] = _curve(base, cu[name], _signal(cfg, name), CurveKind(name.upper()))
            checkups.append(CheckUp(
                stage_id=str(cu["stage_id"]),
                stage_time=float(cu["stage_time"]),
                time_unit=cu.get("time_unit", time_unit),
                eis=eis,
                indicators=AgingIndicators(**cu.get("indicators", {})),
                conditions=cu.get("conditions", cfg.get("conditions", {})),
                **curves,
            ))
        checkups.sort(key=lambda c: c.stage_time)
        lifetests.append(LifeTest(str(dev["device_id"]), dev.get("device_class", device_class),
                                  tuple(checkups), dev.get("metadata", {})))

    split = None
    scfg = cfg.get("split")
    if scfg is not None:
        if "preset" in scfg:
            kwargs = {k: v for k, v in scfg.items() if k != "preset"}
            split = preset_split(scfg["preset"], **kwargs)
            provenance.append(f"split preset {scfg['preset']}")
        else:
            split = split_from_dict(scfg)
        split = _restrict_exclusions(lifetests, split)
    log.info("ingested %d devices, %d check-ups", len(lifetests),
             sum(len(lt.checkups) for lt in lifetests))
    return lifetests, split, provenance


def _restrict_exclusions(lifetests, split: SplitSpec) -> SplitSpec:
    """Excluded devices may be absent from the converted files; drop them."""
    if split.level != "device":
        return split
    known = {lt.device_id for lt in lifetests}
    excl = frozenset(e for e in split.exclusions if e in known)
    return SplitSpec(split.train_ids, split.test_ids, excl, split.level)
