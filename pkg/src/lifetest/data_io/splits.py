"""Train/test assignments of the three public life-test datasets."""

from __future__ import annotations

import logging

from ..model import SplitSpec

log = logging.getLogger(__name__)

# PEMFC life test: 42 cells, three rejected, eleven held out.
PEMFC_TEST = (3, 9, 12, 15, 18, 21, 24, 27, 30, 36, 39)
PEMFC_EXCLUDED = (6, 33, 42)
PEMFC_N_CELLS = 42

# PEMWE: one cell, 28 check-ups; held-out check-ups by 1-based position.
PEMWE_TEST_CHECKUPS = (4, 8, 12, 16, 20, 24, 28)
PEMWE_N_CHECKUPS = 28

# Capacitors: 24 units at three stress levels, three units each held out.
CAPACITOR_IDS = tuple(f"ES{v}C{k}" for v in (10, 12, 14) for k in range(1, 9))
CAPACITOR_TEST_LISTED = ("ES10C1", "ES10C2", "ES10C3", "ES12C1", "ES12C2", "ES10C3",
                         "ES14C1", "ES14C2", "ES14C3")


def pemfc_split(id_format: str = "{n}") -> SplitSpec:
    ids = {n: id_format.format(n=n) for n in range(1, PEMFC_N_CELLS + 1)}
    test = frozenset(ids[n] for n in PEMFC_TEST)
    excluded = frozenset(ids[n] for n in PEMFC_EXCLUDED)
    train = frozenset(v for v in ids.values() if v not in test and v not in excluded)
    return SplitSpec(train, test, excluded)


def pemwe_split() -> SplitSpec:
    log.info("PEMWE test set: %d check-ups listed (the dataset notes mention 8); "
             "using the explicit list", len(PEMWE_TEST_CHECKUPS))
    test = frozenset(PEMWE_TEST_CHECKUPS)
    train = frozenset(k for k in range(1, PEMWE_N_CHECKUPS + 1) if k not in test)
    return SplitSpec(train, test, frozenset(), level="checkup")


def capacitor_test_ids() -> tuple:
    """Listed hold-out ids with the repeated ES10C3 read as ES12C3."""
    out = []
    for cid in CAPACITOR_TEST_LISTED:
        if cid in out:
            fixed = "ES12C3"
            log.warning("capacitor test list repeats %s; substituting %s", cid, fixed)
            cid = fixed
        out.append(cid)
    return tuple(out)


def capacitor_split() -> SplitSpec:
    test = frozenset(capacitor_test_ids())
    train = frozenset(c for c in CAPACITOR_IDS if c not in test)
    return SplitSpec(train, test, frozenset())


PRESETS = {
    "pemfc": pemfc_split,
    "pemwe": pemwe_split,
    "capacitor": capacitor_split,
}


def preset_split(name: str, **kwargs) -> SplitSpec:
    from ..errors import ConfigError

    if name not in PRESETS:
        raise ConfigError(f"unknown split preset {name!r}; choose from {sorted(PRESETS)}")
    return PRESETS[name](**kwargs)
