"""On-disk model archives.

An archive is a directory holding ``manifest.json`` (format version, caller
metadata and one record per forest) and ``forests.npz`` with the raw node
arrays.  Arrays are stored in binary, so reloaded forests predict bitwise
identically.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ParseError, SchemaError
from .core import Forest, ForestParams

ARCHIVE_VERSION = "lifetest-forest-archive/1"
_ARRAYS = ("feature", "threshold", "left", "right", "value", "count", "depth", "offsets")


def forest_record(forest: Forest) -> dict:
    return {
        "params": forest.params.to_dict(),
        "n_features": forest.n_features,
        "y_min": forest.y_min,
        "y_max": forest.y_max,
        "n_trees": forest.n_trees,
    }


def save_archive(path, forests: dict, metadata: dict) -> Path:
    """Write ``forests`` (name -> Forest) with JSON-serialisable ``metadata``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {}
    records = []
    for i, (name, forest) in enumerate(forests.items()):
        rec = forest_record(forest)
        rec["name"] = name
        rec["key"] = f"f{i}"
        records.append(rec)
        for a in _ARRAYS:
            arrays[f"f{i}_{a}"] = getattr(forest, a)
    np.savez(path / "forests.npz", **arrays)
    manifest = {"version": ARCHIVE_VERSION, "metadata": metadata, "forests": records}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_archive(path) -> tuple:
    """Return ``(forests, metadata)``."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.exists():
        raise ParseError(mpath, "archive manifest not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(mpath, exc.msg, exc.lineno, exc.colno) from exc
    if manifest.get("version") != ARCHIVE_VERSION:
        raise SchemaError(f"{mpath}: unsupported archive version {manifest.get('version')!r}")
    forests = {}
    with np.load(path / "forests.npz") as data:
        for rec in manifest["forests"]:
            arrs = [data[f"{rec['key']}_{a}"] for a in _ARRAYS]
            forests[rec["name"]] = Forest(
                ForestParams.from_dict(rec["params"]),
                int(rec["n_features"]),
                float(rec["y_min"]),
                float(rec["y_max"]),
                *arrs,
            )
    return forests, manifest["metadata"]
