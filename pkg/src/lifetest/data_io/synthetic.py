"""Synthetic PEMFC life tests with known ground truth.

Each device carries three degradation states (catalyst area, oxygen transport
resistance, hydrogen crossover) that drift with stage time along a saturating
curve ``1 - exp(-t / tau)``.  Impedance, polarisation, CV and LSV curves and
the aging indicators are analytic functions of those states, so every
indicator is recoverable from the curves and every curve from the impedance.
Noise is added to curves only; indicators stay exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError
from ..model import AgingIndicators, CheckUp, CurveKind, EisSpectrum, LifeTest, SampledCurve, SplitSpec

# 1 Hz - 10 kHz, ten points per decade, as listed for the PEMFC dataset
EIS_GRID_HZ = (
    1.0, 1.2589, 1.5849, 1.9953, 2.5119, 3.1623, 3.9811, 5.0119, 6.3096, 7.9433,
    10.0, 12.589, 15.849, 19.953, 25.119, 31.623, 39.811, 50.119, 63.096, 79.433,
    100.0, 125.89, 158.49, 199.53, 251.19, 316.23, 398.11, 501.19, 630.96, 794.33,
    1000.0, 1258.9, 1584.9, 1995.3, 2511.9, 3162.3, 3981.1, 5011.9, 6309.6, 7943.3,
    10000.0,
)

EIS_CONDITIONS = {
    "t_out": 80.0, "h_ca": 100.0, "h_an": 100.0, "p_ca": 2.0, "p_an": 2.0,
    "f_ca": 5.0, "f_an": 2.0, "i_load": 1.0, "i_amp": 0.1,
}


def impedance(f, r0, r1, tau1, alpha1, r2, tau2, alpha2):
    """R0 + two ZARC elements; returns complex Z (e^{+iwt} convention)."""
    w = 2j * np.pi * np.asarray(f, dtype=float)
    return r0 + r1 / (1 + (w * tau1) ** alpha1) + r2 / (1 + (w * tau2) ** alpha2)


@dataclass(frozen=True)
class SynthConfig:
    n_devices: int = 30
    n_test: int = 8
    stages: tuple = (0.0, 1000.0, 5000.0, 10000.0, 30000.0)
    time_unit: str = "cycles"
    seed: int = 0
    frequencies_hz: tuple = EIS_GRID_HZ

    # equivalent circuit (mOhm*cm2, s)
    r0_fixed: float = 30.0
    r0_membrane: float = 20.0       # membrane part at the reference crossover
    r1_ref: float = 30.0            # charge transfer at the reference ECSA
    r2_per_ro2: float = 1.0         # mass-transport arc per s/m of R_O2,total
    tau1: float = 1e-3
    alpha1: float = 0.85
    tau2: float = 0.02
    alpha2: float = 0.95

    # device-to-device spread of the initial states
    ecsa0: tuple = (40.0, 80.0)
    ro2_0: tuple = (70.0, 130.0)
    icross0: tuple = (1.5e-3, 3.0e-3)
    ecsa_ref: float = 60.0
    icross_ref: float = 2.0e-3

    # saturated fractional change per device (drawn uniformly)
    ecsa_loss: tuple = (0.1, 0.6)
    ilim_loss: tuple = (0.05, 0.25)
    icross_gain: tuple = (0.05, 0.5)
    tau_deg: float = 8000.0

    # indicator and curve couplings
    ilim_coeff: float = 10.0        # I_lim [A/cm2] = ilim_coeff / R_O2
    jlim_coeff: float = 600.0       # IV limiting current = jlim_coeff / R_O2
    u0: float = 1.18
    tafel_b: float = 0.06
    j0_ref: float = 1e-7
    mt_c: float = 0.25
    cv_peak1: float = 6.0
    cv_peak2: float = 5.0
    cv_dl: float = 0.8
    lsv_shunt: float = 2.0          # mA/cm2 per V

    # curve sampling
    iv_max: float = 3.2
    iv_points: int = 33
    cv_range: tuple = (0.05, 0.95)
    cv_points: int = 451
    lsv_range: tuple = (0.1, 0.5)
    lsv_points: int = 201

    noise: float = 0.01             # relative Gaussian noise on curves

    def __post_init__(self):
        for name in ("stages", "frequencies_hz", "ecsa0", "ro2_0", "icross0", "ecsa_loss",
                     "ilim_loss", "icross_gain", "cv_range", "lsv_range"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        positive = ("r0_fixed", "r1_ref", "r2_per_ro2", "tau1", "tau2", "tau_deg", "ecsa_ref",
                    "icross_ref", "ilim_coeff", "jlim_coeff", "j0_ref")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        for name in ("alpha1", "alpha2"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must be in (0, 1]")
        if self.n_devices < 1 or not 0 <= self.n_test <= self.n_devices:
            raise ConfigError("need n_devices >= 1 and 0 <= n_test <= n_devices")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        for name in ("ecsa0", "ro2_0", "icross0", "ecsa_loss", "ilim_loss", "icross_gain"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigError(f"{name} range is reversed")
        if self.ecsa_loss[1] >= 1 or self.ilim_loss[1] >= 1:
            raise ConfigError("ecsa_loss and ilim_loss must stay below 1")
        if any(b <= a for a, b in zip(self.stages, self.stages[1:])) or self.stages[0] < 0:
            raise ConfigError("stages must be ascending and >= 0")
        lowest_jlim = self.jlim_coeff * (1 - self.ilim_loss[1]) / self.ro2_0[1]
        if lowest_jlim <= self.iv_max:
            raise ConfigError("limiting current would fall inside the sampled IV range")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d) -> "SynthConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class DeviceStates:
    ecsa: float
    ro2: float
    icross: float


def progress(cfg: SynthConfig, t: float) -> float:
    return 1.0 - math.exp(-t / cfg.tau_deg)


def states_at(cfg: SynthConfig, base: DeviceStates, rates: dict, t: float) -> DeviceStates:
    g = progress(cfg, t)
    ecsa = base.ecsa * (1.0 - rates["ecsa_loss"] * g)
    return DeviceStates(
        ecsa=ecsa,
        ro2=base.ro2 / (1.0 - rates["ilim_loss"] * g),
        icross=base.icross * (1.0 + rates["icross_gain"] * g),
    )


def indicators_for(cfg: SynthConfig, s: DeviceStates) -> AgingIndicators:
    return AgingIndicators(i_lim=cfg.ilim_coeff / s.ro2, r_o2_total=s.ro2, ecsa=s.ecsa,
                           i_cross=s.icross)


def circuit_for(cfg: SynthConfig, s: DeviceStates) -> tuple:
    r0 = cfg.r0_fixed + cfg.r0_membrane * cfg.icross_ref / s.icross
    r1 = cfg.r1_ref * cfg.ecsa_ref / s.ecsa
    r2 = cfg.r2_per_ro2 * s.ro2
    return r0, r1, cfg.tau1, cfg.alpha1, r2, cfg.tau2, cfg.alpha2


def _curves(cfg: SynthConfig, s: DeviceStates):
    f = np.asarray(cfg.frequencies_hz)
    z = impedance(f, *circuit_for(cfg, s))
    r0 = circuit_for(cfg, s)[0]

    j = np.linspace(0.0, cfg.iv_max, cfg.iv_points)
    j0 = cfg.j0_ref * s.ecsa / cfg.ecsa_ref
    jlim = cfg.jlim_coeff / s.ro2
    u = (cfg.u0 - cfg.tafel_b * np.log10((j + s.icross) / j0) - r0 * 1e-3 * j
         - cfg.mt_c * np.log(jlim / (jlim - j)))

    v = np.linspace(*cfg.cv_range, cfg.cv_points)
    area = s.ecsa / cfg.ecsa_ref
    i_cv = area * (cfg.cv_peak1 * np.exp(-0.5 * ((v - 0.13) / 0.03) ** 2)
                   + cfg.cv_peak2 * np.exp(-0.5 * ((v - 0.27) / 0.04) ** 2)
                   + cfg.cv_dl) + 500.0 * s.icross

    vl = np.linspace(*cfg.lsv_range, cfg.lsv_points)
    i_lsv = 1000.0 * s.icross * (1.0 - np.exp(-(vl - 0.05) / 0.02)) + cfg.lsv_shunt * vl
    return f, z, (j, u), (v, i_cv), (vl, i_lsv)


def generate_synthetic(config: SynthConfig) -> tuple:
    """Return ``(lifetests, split)``; deterministic in ``config.seed``."""
    cfg = config
    lifetests = []
    for d in range(cfg.n_devices):
        rng = np.random.default_rng([cfg.seed, d])
        base = DeviceStates(rng.uniform(*cfg.ecsa0), rng.uniform(*cfg.ro2_0), rng.uniform(*cfg.icross0))
        rates = {
            "ecsa_loss": float(rng.uniform(*cfg.ecsa_loss)),
            "ilim_loss": float(rng.uniform(*cfg.ilim_loss)),
            "icross_gain": float(rng.uniform(*cfg.icross_gain)),
        }

        def noisy(y):
            if cfg.noise == 0:
                return y
            return y * (1.0 + cfg.noise * rng.standard_normal(y.shape))

        checkups = []
        for t in cfg.stages:
            s = states_at(cfg, base, rates, t)
            f, z, (j, u), (v, i_cv), (vl, i_lsv) = _curves(cfg, s)
            checkups.append(CheckUp(
                stage_id=f"{t:g}",
                stage_time=float(t),
                time_unit=cfg.time_unit,
                eis=EisSpectrum(f, noisy(z.real), noisy(z.imag)),
                iv=SampledCurve(CurveKind.IV, j, noisy(u)),
                cv=SampledCurve(CurveKind.CV, v, noisy(i_cv)),
                lsv=SampledCurve(CurveKind.LSV, vl, noisy(i_lsv)),
                indicators=indicators_for(cfg, s),
                conditions=dict(EIS_CONDITIONS),
            ))
        meta = {"synthetic": True, "ecsa0": base.ecsa, "ro2_0": base.ro2, "icross0": base.icross}
        meta.update(rates)
        lifetests.append(LifeTest(f"S{d + 1:03d}", "PEMFC", tuple(checkups), meta))

    ids = [lt.device_id for lt in lifetests]
    order = np.random.default_rng([cfg.seed, 2**31 - 1]).permutation(len(ids))
    test = {ids[i] for i in order[: cfg.n_test]}
    split = SplitSpec(frozenset(i for i in ids if i not in test), frozenset(test))
    return lifetests, split
