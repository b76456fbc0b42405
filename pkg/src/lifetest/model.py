"""Data model for life-test collections.

All containers are frozen dataclasses.  Numeric series are stored as read-only
float64 arrays so instances can be shared between worker threads.  Invariants
are *not* enforced at construction time: malformed data must be representable
so that :func:`validate_lifetest` can report it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, fields, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import Ambiguous, NoMatch, UnitMismatch

Selector = Union[str, float, int]


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    arr.setflags(write=False)
    return arr


class CurveKind(str, enum.Enum):
    IV = "IV"
    CV = "CV"
    LSV = "LSV"
    DeltaVI = "DeltaVI"
    DeltaIV = "DeltaIV"
    DeltaReF = "DeltaReF"
    DeltaImF = "DeltaImF"


# canonical (x unit, y unit) per curve kind
CURVE_UNITS = {
    CurveKind.IV: ("A/cm2", "V"),
    CurveKind.CV: ("V", "mA/cm2"),
    CurveKind.LSV: ("V", "mA/cm2"),
    CurveKind.DeltaVI: ("A/cm2", "V"),
    CurveKind.DeltaIV: ("V", "mA/cm2"),
    CurveKind.DeltaReF: ("Hz", "mOhm*cm2"),
    CurveKind.DeltaImF: ("Hz", "mOhm*cm2"),
}

EIS_UNIT = "mOhm*cm2"

INDICATOR_UNITS = {
    "i_lim": "A/cm2",
    "r_o2_total": "s/m",
    "ecsa": "cm2_Pt/cm2_geo",
    "i_cross": "A/cm2",
    "c_rem": "uF",
}
POSITIVE_INDICATORS = ("r_o2_total", "ecsa", "c_rem")

CONDITION_UNITS = {
    "t_out": "degC",
    "h_ca": "%",
    "h_an": "%",
    "p_ca": "bara",
    "p_an": "bara",
    "f_ca": "NLPM",
    "f_an": "NLPM",
    "i_load": "A/cm2",
    "i_amp": "A/cm2",
    "v_range_low": "V",
    "v_range_high": "V",
    "v_step": "V",
    "v_hold": "min",
    "n_cv": "count",
    "scan_rate": "mV/s",
    "v_scan_low": "V",
    "v_scan_high": "V",
}

DEVICE_CLASSES = ("PEMFC", "PEMWE", "Capacitor")
TIME_UNITS = ("s", "h", "cycles")


@dataclass(frozen=True, eq=False)
class EisSpectrum:
    """Impedance spectrum of one check-up.

    ``im`` keeps the sign found in the source data; nothing downstream ever
    negates it.
    """

    frequencies_hz: np.ndarray
    re: np.ndarray
    im: np.ndarray
    unit: str = EIS_UNIT

    def __post_init__(self):
        for name in ("frequencies_hz", "re", "im"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name)))

    def __eq__(self, other):
        if not isinstance(other, EisSpectrum):
            return NotImplemented
        return (
            self.unit == other.unit
            and np.array_equal(self.frequencies_hz, other.frequencies_hz)
            and np.array_equal(self.re, other.re)
            and np.array_equal(self.im, other.im)
        )

    __hash__ = None

    def __len__(self):
        return len(self.frequencies_hz)

    def band(self, f_lo: float, f_hi: float) -> "EisSpectrum":
        """Restrict to frequencies in ``[f_lo, f_hi]`` (1e-9 relative slack)."""
        f = self.frequencies_hz
        mask = (f >= f_lo * (1 - 1e-9)) & (f <= f_hi * (1 + 1e-9))
        return EisSpectrum(f[mask], self.re[mask], self.im[mask], self.unit)

    def vector(self) -> np.ndarray:
        """Concatenated ``[re; im]``."""
        return np.concatenate([self.re, self.im])


@dataclass(frozen=True, eq=False)
class SampledCurve:
    kind: CurveKind
    x: np.ndarray
    y: np.ndarray
    x_unit: Optional[str] = None
    y_unit: Optional[str] = None

    def __post_init__(self):
        kind = CurveKind(self.kind)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "x", _frozen_array(self.x))
        object.__setattr__(self, "y", _frozen_array(self.y))
        xu, yu = CURVE_UNITS[kind]
        if self.x_unit is None:
            object.__setattr__(self, "x_unit", xu)
        if self.y_unit is None:
            object.__setattr__(self, "y_unit", yu)

    def __eq__(self, other):
        if not isinstance(other, SampledCurve):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.x_unit == other.x_unit
            and self.y_unit == other.y_unit
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
        )

    __hash__ = None

    def __len__(self):
        return len(self.x)


def require_units(curve: SampledCurve, x_unit: str, y_unit: str) -> None:
    if curve.x_unit != x_unit or curve.y_unit != y_unit:
        raise UnitMismatch(
            f"{curve.kind.value} curve in ({curve.x_unit}, {curve.y_unit}), "
            f"expected ({x_unit}, {y_unit})"
        )


@dataclass(frozen=True)
class AgingIndicators:
    i_lim: Optional[float] = None
    r_o2_total: Optional[float] = None
    ecsa: Optional[float] = None
    i_cross: Optional[float] = None
    c_rem: Optional[float] = None

    def get(self, name: str) -> Optional[float]:
        if name not in INDICATOR_UNITS:
            raise KeyError(name)
        return getattr(self, name)

    def present(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}


@dataclass(frozen=True)
class CheckUp:
    stage_id: str
    stage_time: float
    time_unit: str = "cycles"
    eis: Optional[EisSpectrum] = None
    iv: Optional[SampledCurve] = None
    cv: Optional[SampledCurve] = None
    lsv: Optional[SampledCurve] = None
    indicators: AgingIndicators = field(default_factory=AgingIndicators)
    conditions: Mapping[str, float] = field(default_factory=dict)

    def curve(self, kind: Union[CurveKind, str]) -> Optional[SampledCurve]:
        kind = CurveKind(kind)
        return {CurveKind.IV: self.iv, CurveKind.CV: self.cv, CurveKind.LSV: self.lsv}[kind]


@dataclass(frozen=True)
class LifeTest:
    device_id: str
    device_class: str
    checkups: tuple
    metadata: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "checkups", tuple(self.checkups))

    def with_checkups(self, checkups: Sequence[CheckUp]) -> "LifeTest":
        return replace(self, checkups=tuple(checkups))


@dataclass(frozen=True)
class StageSpec:
    t1: Selector
    t2: Selector
    t3: Selector


@dataclass(frozen=True)
class SplitSpec:
    """Train/test assignment.

    With ``level="device"`` ids are device ids.  With ``level="checkup"`` ids
    are 1-based check-up positions within each device (the single-device
    layout of a PEMWE life test).
    """

    train_ids: frozenset
    test_ids: frozenset
    exclusions: frozenset = frozenset()
    level: str = "device"

    def __post_init__(self):
        for name in ("train_ids", "test_ids", "exclusions"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))


@dataclass(frozen=True)
class Violation:
    device_id: str
    stage_id: Optional[str]
    field: str
    message: str

    def __str__(self):
        stage = f"/{self.stage_id}" if self.stage_id is not None else ""
        return f"{self.device_id}{stage} {self.field}: {self.message}"


def _strictly_monotone(x: np.ndarray) -> bool:
    d = np.diff(x)
    return bool(np.all(d > 0) or np.all(d < 0))


def _check_curve(curve: SampledCurve, dev, stage, name, out):
    if len(curve.x) != len(curve.y):
        out.append(Violation(dev, stage, name, "x and y lengths differ"))
        return
    if not (np.all(np.isfinite(curve.x)) and np.all(np.isfinite(curve.y))):
        out.append(Violation(dev, stage, name, "non-finite values"))
    if len(curve.x) >= 2 and not _strictly_monotone(curve.x):
        out.append(Violation(dev, stage, name, "x not strictly monotone"))
    xu, yu = CURVE_UNITS[curve.kind]
    if curve.kind in (CurveKind.IV, CurveKind.CV, CurveKind.LSV) and curve.x_unit != xu:
        out.append(Violation(dev, stage, name, f"x unit {curve.x_unit!r}, expected {xu!r}"))


def validate_lifetest(lt: LifeTest) -> list:
    """Return a list of :class:`Violation`; empty when every invariant holds."""
    out = []
    dev = lt.device_id
    if lt.device_class not in DEVICE_CLASSES:
        out.append(Violation(dev, None, "device_class", f"unknown class {lt.device_class!r}"))
    times = []
    for cu in lt.checkups:
        st = cu.stage_id
        times.append(cu.stage_time)
        if not math.isfinite(cu.stage_time) or cu.stage_time < 0:
            out.append(Violation(dev, st, "stage_time", "must be finite and >= 0"))
        if cu.time_unit not in TIME_UNITS:
            out.append(Violation(dev, st, "time_unit", f"unknown unit {cu.time_unit!r}"))
        if cu.eis is not None:
            e = cu.eis
            n = len(e.frequencies_hz)
            if not (len(e.re) == n and len(e.im) == n):
                out.append(Violation(dev, st, "eis", "frequency/re/im lengths differ"))
            else:
                if not np.all(np.isfinite(np.concatenate([e.frequencies_hz, e.re, e.im]))):
                    out.append(Violation(dev, st, "eis", "non-finite values"))
                if np.any(e.frequencies_hz <= 0):
                    out.append(Violation(dev, st, "eis", "frequencies must be > 0"))
                if n >= 2 and not np.all(np.diff(e.frequencies_hz) > 0):
                    out.append(Violation(dev, st, "eis", "frequencies not strictly increasing"))
        for name, kind in (("iv", CurveKind.IV), ("cv", CurveKind.CV), ("lsv", CurveKind.LSV)):
            curve = getattr(cu, name)
            if curve is None:
                continue
            if curve.kind != kind:
                out.append(Violation(dev, st, name, f"holds a {curve.kind.value} curve"))
            _check_curve(curve, dev, st, name, out)
        for name, value in cu.indicators.present().items():
            if not math.isfinite(value):
                out.append(Violation(dev, st, f"indicators.{name}", "non-finite value"))
            elif name in POSITIVE_INDICATORS and value <= 0:
                out.append(Violation(dev, st, f"indicators.{name}", "must be > 0"))
        for key, value in cu.conditions.items():
            if key not in CONDITION_UNITS:
                out.append(Violation(dev, st, f"conditions.{key}", "undocumented condition key"))
            if not math.isfinite(float(value)):
                out.append(Violation(dev, st, f"conditions.{key}", "non-finite value"))
    if any(b < a for a, b in zip(times, times[1:])):
        out.append(Violation(dev, None, "checkups", "checkups unsorted by stage_time"))
    return out


def validate_collection(lifetests: Sequence[LifeTest]) -> list:
    out = []
    seen = set()
    for lt in lifetests:
        if lt.device_id in seen:
            out.append(Violation(lt.device_id, None, "device_id", "duplicate device id"))
        seen.add(lt.device_id)
        out.extend(validate_lifetest(lt))
    return out


def _time_matches(t: float, sel: float) -> bool:
    return abs(t - sel) <= 1e-9 * max(abs(t), abs(sel))


def resolve_stage(lt: LifeTest, selector: Selector) -> CheckUp:
    """Find the single check-up matching ``selector``.

    A string selects by ``stage_id``; a number selects by ``stage_time`` with a
    relative tolerance of 1e-9.
    """
    if isinstance(selector, str):
        hits = [c for c in lt.checkups if c.stage_id == selector]
    else:
        sel = float(selector)
        hits = [c for c in lt.checkups if _time_matches(c.stage_time, sel)]
    if not hits:
        raise NoMatch(f"{lt.device_id}: no check-up matches {selector!r}")
    if len(hits) > 1:
        raise Ambiguous(f"{lt.device_id}: {len(hits)} check-ups match {selector!r}")
    return hits[0]


def resolve_stages(lt: LifeTest, spec: StageSpec) -> tuple:
    """Resolve T1/T2/T3 and check their ordering."""
    c1, c2, c3 = (resolve_stage(lt, s) for s in (spec.t1, spec.t2, spec.t3))
    if not (c1.stage_time < c2.stage_time < c3.stage_time):
        raise NoMatch(
            f"{lt.device_id}: stages not ordered "
            f"({c1.stage_time}, {c2.stage_time}, {c3.stage_time})"
        )
    return c1, c2, c3


def cv_anodic_branch(voltage, current, y_unit: str = "mA/cm2") -> SampledCurve:
    """Reduce a raw CV loop to a single-valued curve.

    Takes the last increasing-voltage sweep of the recording, sorts it by
    voltage and keeps the first sample at each voltage.
    """
    v = np.asarray(voltage, dtype=float)
    i = np.asarray(current, dtype=float)
    if len(v) != len(i) or len(v) < 2:
        raise NoMatch("CV loop needs >= 2 paired samples")
    dv = np.diff(v)
    rising = dv > 0
    # last maximal run of rising steps
    end = None
    for k in range(len(dv) - 1, -1, -1):
        if rising[k]:
            end = k + 1
            break
    if end is None:
        raise NoMatch("CV loop has no anodic sweep")
    start = end - 1
    while start > 0 and rising[start - 1]:
        start -= 1
    seg_v = v[start : end + 1]
    seg_i = i[start : end + 1]
    order = np.argsort(seg_v, kind="stable")
    seg_v, seg_i = seg_v[order], seg_i[order]
    _, first = np.unique(seg_v, return_index=True)
    return SampledCurve(CurveKind.CV, seg_v[first], seg_i[first], y_unit=y_unit)
