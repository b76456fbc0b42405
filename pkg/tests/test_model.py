import numpy as np
import pytest

from lifetest.errors import Ambiguous, NoMatch, UnitMismatch
from lifetest.model import (
    AgingIndicators,
    CheckUp,
    CurveKind,
    EisSpectrum,
    LifeTest,
    SampledCurve,
    StageSpec,
    cv_anodic_branch,
    require_units,
    resolve_stage,
    resolve_stages,
    validate_lifetest,
)


def _device(times=(0.0, 1000.0, 5000.0), ids=None):
    ids = ids or [f"s{k}" for k in range(len(times))]
    cus = [CheckUp(stage_id=i, stage_time=t) for i, t in zip(ids, times)]
    return LifeTest("D1", "PEMFC", cus)


def test_containers_are_immutable():
    c = SampledCurve(CurveKind.IV, [0, 1, 2], [1.0, 0.9, 0.8])
    with pytest.raises(ValueError):
        c.y[0] = 5.0
    assert c.x_unit == "A/cm2" and c.y_unit == "V"
    e = EisSpectrum([1, 10], [5, 4], [-1, -2])
    np.testing.assert_array_equal(e.vector(), [5, 4, -1, -2])
    assert len(e.band(2, 100)) == 1


def test_indicators_accessors():
    ind = AgingIndicators(ecsa=50.0, i_cross=2e-3)
    assert ind.present() == {"ecsa": 50.0, "i_cross": 2e-3}
    assert ind.get("i_lim") is None
    with pytest.raises(KeyError):
        ind.get("voltage")


def test_clean_device_validates():
    assert validate_lifetest(_device()) == []


@pytest.mark.parametrize("checkup,field", [
    (CheckUp("a", -1.0), "stage_time"),
    (CheckUp("a", 0.0, time_unit="days"), "time_unit"),
    (CheckUp("a", 0.0, eis=EisSpectrum([10, 1], [1, 1], [0, 0])), "eis"),
    (CheckUp("a", 0.0, eis=EisSpectrum([0, 1], [1, 1], [0, 0])), "eis"),
    (CheckUp("a", 0.0, iv=SampledCurve("IV", [0, 1, 1], [1, 1, 1])), "iv"),
    (CheckUp("a", 0.0, iv=SampledCurve("IV", [0, 1], [1, np.nan])), "iv"),
    (CheckUp("a", 0.0, cv=SampledCurve("IV", [0, 1], [1, 2])), "cv"),
    (CheckUp("a", 0.0, indicators=AgingIndicators(ecsa=-1.0)), "indicators.ecsa"),
    (CheckUp("a", 0.0, conditions={"colour": 1.0}), "conditions.colour"),
])
def test_violations_are_reported_not_raised(checkup, field):
    out = validate_lifetest(LifeTest("D", "PEMFC", (checkup,)))
    assert any(v.field == field for v in out), out


def test_unsorted_checkups_and_unknown_class():
    lt = LifeTest("D", "Battery", (CheckUp("b", 5.0), CheckUp("a", 1.0)))
    fields = {v.field for v in validate_lifetest(lt)}
    assert {"checkups", "device_class"} <= fields


def test_stage_resolution_by_id_and_time():
    lt = _device()
    assert resolve_stage(lt, "s1").stage_time == 1000.0
    assert resolve_stage(lt, 5000).stage_id == "s2"
    assert resolve_stage(lt, 1000.0 * (1 + 1e-12)).stage_id == "s1"
    with pytest.raises(NoMatch):
        resolve_stage(lt, 42.0)
    with pytest.raises(NoMatch):
        resolve_stage(lt, "nope")
    with pytest.raises(Ambiguous):
        resolve_stage(_device(ids=["x", "x", "y"]), "x")


def test_stage_order_is_enforced():
    lt = _device()
    c1, c2, c3 = resolve_stages(lt, StageSpec(0.0, 1000.0, "s2"))
    assert (c1.stage_id, c2.stage_id, c3.stage_id) == ("s0", "s1", "s2")
    with pytest.raises(NoMatch):
        resolve_stages(lt, StageSpec("s1", "s0", "s2"))


def test_unit_guard():
    c = SampledCurve(CurveKind.CV, [0, 1], [1, 2], y_unit="A/cm2")
    with pytest.raises(UnitMismatch):
        require_units(c, "V", "mA/cm2")
    require_units(c, "V", "A/cm2")


def test_cv_loop_reduces_to_last_anodic_sweep():
    up = np.linspace(0.05, 0.9, 50)
    down = up[::-1][1:]
    v = np.concatenate([up, down, up[1:]])
    i = np.concatenate([np.full(50, 1.0), np.full(49, -1.0), np.full(49, 2.0)])
    c = cv_anodic_branch(v, i)
    assert c.kind is CurveKind.CV
    assert np.all(np.diff(c.x) > 0)
    # the last sweep starts at the turning point, which still carries the cathodic current
    assert len(c.x) == 50 and c.y[0] == -1.0 and np.all(c.y[1:] == 2.0)
    with pytest.raises(NoMatch):
        cv_anodic_branch([1.0, 0.5, 0.1], [0, 0, 0])
