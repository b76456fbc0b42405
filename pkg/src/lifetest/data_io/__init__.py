"""Dataset I/O: canonical format, raw-data adapters, splits, synthetic data."""

from .adapters import ingest
from .formats import FORMAT_VERSION, load_dataset, normalize_unit, split, write_dataset
from .splits import capacitor_split, pemfc_split, pemwe_split, preset_split
from .synthetic import SynthConfig, generate_synthetic, impedance

__all__ = [
    "FORMAT_VERSION",
    "SynthConfig",
    "capacitor_split",
    "generate_synthetic",
    "impedance",
    "ingest",
    "load_dataset",
    "normalize_unit",
    "pemfc_split",
    "pemwe_split",
    "preset_split",
    "split",
    "write_dataset",
]
