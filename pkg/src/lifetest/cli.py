"""Command-line entry point.

::

    lifetest synth  --config synth.json --out data/ --seed 0
    lifetest ingest --config adapter.json --out data/ --seed 0
    lifetest pcdp  train|predict|evaluate --manifest data/manifest.json ... --seed 0
    lifetest lpalt train|predict|evaluate --manifest data/manifest.json ... --seed 0
    lifetest report --inputs a/metrics.json b/metrics.json --out report/ --seed 0

Every command writes ``run.json`` (config echo, seed, versions, timings) into
its output directory.  Failures print one JSON object on stderr and exit with
2 (usage or configuration), 3 (data) or 4 (model).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError, LifetestError, ModelError

log = logging.getLogger("lifetest")

METRICS_SCHEMA = "lifetest-metrics/1"
REPORT_SCHEMA = "lifetest-report/1"
RUN_SCHEMA = "lifetest-run/1"

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MODEL = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- helpers


def canonical_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj), encoding="utf-8")
    return path


def _read_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file not found: {p}")
    try:
        d = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    return d


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _with_seed(cfg: dict, seed: int) -> dict:
    if "seed" in cfg and int(cfg["seed"]) != seed:
        log.warning("config seed %s replaced by --seed %d", cfg["seed"], seed)
    return {**cfg, "seed": seed}


def versions() -> dict:
    import numba
    import scipy

    return {"lifetest": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _subset(lifetests, split, which: str):
    from .data_io import split as do_split

    if which == "all" or split is None:
        if which != "all":
            log.info("manifest has no split; using every device")
        return list(lifetests)
    train, test = do_split(lifetests, split)
    return train if which == "train" else test


def _load(manifest, threads):
    from .data_io import load_dataset

    return load_dataset(_require_file(manifest, "manifest"), threads=max(1, threads))


def _scatter_csv(path: Path, y_true, y_pred, ids=None) -> None:
    yt = np.asarray(y_true, dtype=float)
    yp = np.asarray(y_pred, dtype=float)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if yt.ndim == 2:
            w.writerow(["row", "target", "y_true", "y_pred"])
            for r in range(yt.shape[0]):
                for c in range(yt.shape[1]):
                    w.writerow([r, c, repr(float(yt[r, c])), repr(float(yp[r, c]))])
        else:
            w.writerow(["id", "y_true", "y_pred"])
            for r in range(len(yt)):
                rid = ids[r] if ids is not None else r
                w.writerow([rid, repr(float(yt[r])), repr(float(yp[r]))])


def _metrics_rows(rows, key_fields):
    return [{**{k: r[k] for k in key_fields}, "metrics": r["metrics"].to_dict()} for r in rows]


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> dict:
    from .data_io import SynthConfig, generate_synthetic, write_dataset

    cfg = SynthConfig.from_dict(_with_seed(_read_config(args.config), args.seed))
    lifetests, split = generate_synthetic(cfg)
    mpath = write_dataset(lifetests, split, args.out,
                          provenance=[f"synthetic generator, seed {cfg.seed}"])
    return {"config": cfg.to_dict(), "outputs": {"manifest": str(mpath)},
            "counts": {"devices": len(lifetests), "train": len(split.train_ids),
                       "test": len(split.test_ids)}}


def cmd_ingest(args) -> dict:
    from .data_io import ingest, write_dataset

    lifetests, split, provenance = ingest(_require_file(args.config, "adapter config"))
    mpath = write_dataset(lifetests, split, args.out, provenance)
    return {"config": _read_config(args.config), "outputs": {"manifest": str(mpath)},
            "counts": {"devices": len(lifetests),
                       "checkups": sum(len(lt.checkups) for lt in lifetests)}}


def _tuning_override(d: dict, args) -> dict:
    if getattr(args, "skip_grid_search", False):
        fixed = d.get("tuning", {}).get("fixed")
        if fixed is None:
            from .forest import ForestParams

            fixed = ForestParams().to_dict()
        d = {**d, "tuning": {"grid": None, "fixed": fixed}}
    return d


def cmd_pcdp_train(args) -> dict:
    from .pcdp import PcdpConfig, save_pcdp_bundle, train_pcdp

    raw = _tuning_override(_with_seed(_read_config(args.config), args.seed), args)
    config = PcdpConfig.from_dict(raw, threads=args.threads)
    lifetests, split = _load(args.manifest, args.threads)
    rows = [cu for lt in _subset(lifetests, split, args.subset) for cu in lt.checkups]
    bundle = train_pcdp(rows, config)
    save_pcdp_bundle(bundle, args.out)
    return {"config": config.to_dict(), "outputs": {"bundle": str(args.out)},
            "counts": {"checkups": len(rows)},
            "preset_frequencies": bundle.preset.to_dict()}


def _parse_probe(text: str):
    from .pcdp import ProbeVector

    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--probe needs four comma-separated numbers, got {text!r}") from None
    if len(vals) != 4:
        raise UsageError(f"--probe needs four comma-separated numbers, got {len(vals)}")
    return ProbeVector(*vals)


def cmd_pcdp_predict(args) -> dict:
    from .pcdp import load_pcdp_bundle, predict_pcdp_batch, probe_impedances

    bundle = load_pcdp_bundle(_require_file(args.bundle, "bundle"), threads=args.threads)
    labels, probes = [], []
    if args.probe:
        labels.append("probe")
        probes.append(_parse_probe(args.probe))
    elif args.manifest:
        lifetests, split = _load(args.manifest, args.threads)
        for lt in _subset(lifetests, split, args.subset):
            for cu in lt.checkups:
                if cu.eis is not None:
                    labels.append(f"{lt.device_id}/{cu.stage_id}")
                    probes.append(probe_impedances(cu.eis, bundle.preset))
    else:
        raise UsageError("pcdp predict needs --probe or --manifest")
    preds = predict_pcdp_batch(bundle, probes) if probes else []
    out = Path(args.out)
    records = []
    for label, probe, p in zip(labels, probes, preds):
        records.append({
            "id": label,
            "probe": probe.array().tolist(),
            "eis": {"frequencies_hz": p.eis.frequencies_hz.tolist(), "re": p.eis.re.tolist(),
                    "im": p.eis.im.tolist()},
            "curves": {k: {"x": c.x.tolist(), "y": c.y.tolist()} for k, c in p.curves.items()},
            "indicators": p.indicators.present(),
            "provenance": p.provenance,
        })
    _write_json(out / "predictions.json", {"schema": METRICS_SCHEMA, "pipeline": "pcdp",
                                           "predictions": records})
    return {"config": {"bundle": str(args.bundle)}, "outputs": {"predictions": str(out / "predictions.json")},
            "counts": {"predictions": len(records)}}


def cmd_pcdp_evaluate(args) -> dict:
    from .pcdp import evaluate_pcdp, load_pcdp_bundle

    bundle = load_pcdp_bundle(_require_file(args.bundle, "bundle"), threads=args.threads)
    lifetests, split = _load(args.manifest, args.threads)
    rows = [cu for lt in _subset(lifetests, split, args.subset) for cu in lt.checkups]
    ev = evaluate_pcdp(bundle, rows)
    metrics = {
        "schema": METRICS_SCHEMA,
        "pipeline": "pcdp",
        "subset": args.subset,
        "preset_frequencies": bundle.preset.to_dict(),
        "rows": _metrics_rows(ev.rows, ("output", "source", "n_checkups")),
    }
    out = Path(args.out)
    _write_json(out / "metrics.json", metrics)
    if args.plots:
        for (output, source), (yt, yp) in ev.pairs.items():
            _scatter_csv(out / "plots" / f"pcdp_{output}_{source}.csv", yt, yp)
    return {"config": {"bundle": str(args.bundle), "subset": args.subset},
            "outputs": {"metrics": str(out / "metrics.json")}}


def _default_stages(lifetests):
    """First, second and last stage time of the first device."""
    if not lifetests or len(lifetests[0].checkups) < 3:
        raise ConfigError("stages not configured and the first device has fewer than 3 check-ups")
    cu = lifetests[0].checkups
    return {"t1": cu[0].stage_time, "t2": cu[1].stage_time, "t3": cu[-1].stage_time}


def cmd_lpalt_train(args) -> dict:
    from .lpalt import LpAltConfig, save_lpalt_bundle, train_lpalt

    raw = _tuning_override(_with_seed(_read_config(args.config), args.seed), args)
    lifetests, split = _load(args.manifest, args.threads)
    train = _subset(lifetests, split, args.subset)
    if "stages" not in raw:
        raw["stages"] = _default_stages(train)
        log.info("stages defaulted to %s", raw["stages"])
    config = LpAltConfig.from_dict(raw, threads=args.threads)
    bundle = train_lpalt(train, config)
    save_lpalt_bundle(bundle, args.out)
    return {"config": config.to_dict(), "outputs": {"bundle": str(args.out)},
            "counts": {"devices": len(train)},
            "formulas": {k: [f.expression for f in m.formulas] for k, m in bundle.models.items()}}


def cmd_lpalt_predict(args) -> dict:
    from .lpalt import load_lpalt_bundle, predict_lpalt

    bundle = load_lpalt_bundle(_require_file(args.bundle, "bundle"), threads=args.threads)
    lifetests, split = _load(args.manifest, args.threads)
    records = []
    for lt in _subset(lifetests, split, args.subset):
        p = predict_lpalt(bundle, lt)
        records.append({"device_id": p.device_id, "t3": p.t3.present(), "delta": p.delta,
                        "t1": p.t1, "features": p.features})
    out = Path(args.out)
    _write_json(out / "predictions.json", {"schema": METRICS_SCHEMA, "pipeline": "lpalt",
                                           "predictions": records})
    return {"config": {"bundle": str(args.bundle), "subset": args.subset},
            "outputs": {"predictions": str(out / "predictions.json")},
            "counts": {"devices": len(records)}}


def cmd_lpalt_evaluate(args) -> dict:
    from .lpalt import acceleration_report, evaluate_lpalt, load_lpalt_bundle

    bundle = load_lpalt_bundle(_require_file(args.bundle, "bundle"), threads=args.threads)
    lifetests, split = _load(args.manifest, args.threads)
    test = _subset(lifetests, split, args.subset)
    ev = evaluate_lpalt(bundle, test)
    stages = bundle.config.stages
    reference = test[0] if test else None
    if args.horizon is not None:
        horizon = args.horizon
    else:
        from .model import resolve_stage

        t3 = stages.t3
        horizon = resolve_stage(reference, t3).stage_time if isinstance(t3, str) else float(t3)
    accel = acceleration_report(stages, horizon, reference=reference)
    metrics = {
        "schema": METRICS_SCHEMA,
        "pipeline": "lpalt",
        "subset": args.subset,
        "acceleration": accel,
        "formulas": {k: [f.expression for f in m.formulas] for k, m in bundle.models.items()},
        "rows": _metrics_rows(ev.rows, ("indicator", "quantity", "n_devices")),
    }
    out = Path(args.out)
    _write_json(out / "metrics.json", metrics)
    if args.plots:
        for (ind, q), (yt, yp, ids) in ev.pairs.items():
            _scatter_csv(out / "plots" / f"lpalt_{ind}_{q}.csv", yt, yp, ids)
    return {"config": {"bundle": str(args.bundle), "subset": args.subset, "horizon": horizon},
            "outputs": {"metrics": str(out / "metrics.json")}}


def cmd_report(args) -> dict:
    out = Path(args.out)
    merged, summary = [], []
    for path in args.inputs:
        p = _require_file(path, "metrics file")
        try:
            m = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{exc.lineno}: {exc.msg}") from None
        if m.get("schema") != METRICS_SCHEMA:
            raise ConfigError(f"{p}: not a metrics file (schema {m.get('schema')!r})")
        merged.append({"source": str(p), **m})
        for r in m.get("rows", []):
            what = r.get("output", r.get("indicator"))
            variant = r.get("source", r.get("quantity"))
            summary.append([m["pipeline"], what, variant] +
                           [r["metrics"].get(k) for k in ("r2", "mae", "rmse", "mape_percent", "n")])
        plots = p.parent / "plots"
        if plots.is_dir():
            for f in sorted(plots.glob("*.csv")):
                dest = out / "plots" / f.name
                dest.parent.mkdir(parents=True, exist_ok=True)
                dest.write_bytes(f.read_bytes())
    _write_json(out / "report.json", {"schema": REPORT_SCHEMA, "inputs": merged})
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pipeline", "output", "variant", "r2", "mae", "rmse", "mape_percent", "n"])
        w.writerows(["" if v is None else v for v in row] for row in summary)
    return {"config": {"inputs": [str(p) for p in args.inputs]},
            "outputs": {"report": str(out / "report.json"), "summary": str(out / "summary.csv")}}


# ---------------------------------------------------------------- parser


def _common(p, *, out=True, manifest=False, config=False, bundle=False, subset=None, plots=False):
    p.add_argument("--seed", type=int, required=True, help="root seed (mandatory)")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--log-level", default="WARNING")
    if out:
        p.add_argument("--out", required=True, help="output directory")
    if manifest:
        p.add_argument("--manifest", required=manifest == "required",
                       help="canonical dataset manifest.json")
    if config:
        p.add_argument("--config", required=config == "required", help="JSON config file")
    if bundle:
        p.add_argument("--bundle", required=True, help="model bundle directory")
    if subset:
        p.add_argument("--subset", choices=("train", "test", "all"), default=subset)
    if plots:
        p.add_argument("--plots", action="store_true", help="write predicted-vs-true CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lifetest", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"lifetest {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _common(p, config=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="convert a raw dataset via an adapter config")
    _common(p, config="required")
    p.set_defaults(func=cmd_ingest)

    for name, mod in (("pcdp", "pcdp"), ("lpalt", "lpalt")):
        grp = sub.add_parser(name, help=f"{name} pipeline")
        verbs = grp.add_subparsers(dest="verb", required=True, parser_class=_Parser)
        t = verbs.add_parser("train")
        _common(t, manifest="required", config=True, subset="train")
        t.add_argument("--skip-grid-search", action="store_true",
                       help="use fixed forest parameters instead of the grid search")
        t.set_defaults(func=cmd_pcdp_train if mod == "pcdp" else cmd_lpalt_train)
        pr = verbs.add_parser("predict")
        _common(pr, manifest="required" if mod == "lpalt" else True, bundle=True, subset="test")
        if mod == "pcdp":
            pr.add_argument("--probe", help="re1,im1,re2,im2 at the preset frequencies")
        pr.set_defaults(func=cmd_pcdp_predict if mod == "pcdp" else cmd_lpalt_predict)
        ev = verbs.add_parser("evaluate")
        _common(ev, manifest="required", bundle=True, subset="test", plots=True)
        if mod == "lpalt":
            ev.add_argument("--horizon", type=float, help="full-test duration (default: T3 time)")
        ev.set_defaults(func=cmd_pcdp_evaluate if mod == "pcdp" else cmd_lpalt_evaluate)

    p = sub.add_parser("report", help="merge metrics files into one report")
    _common(p)
    p.add_argument("--inputs", nargs="+", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _error(kind: str, exc: BaseException, code: int) -> int:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    sys.stderr.write(json.dumps(payload, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _error("usage", exc, EXIT_USAGE)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    t0 = time.perf_counter()
    try:
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        record = args.func(args)
    except UsageError as exc:
        return _error("usage", exc, EXIT_USAGE)
    except ConfigError as exc:
        return _error("usage", exc, EXIT_USAGE)
    except DataError as exc:
        return _error("data", exc, EXIT_DATA)
    except ModelError as exc:
        return _error("model", exc, EXIT_MODEL)
    except LifetestError as exc:
        return _error("data", exc, EXIT_DATA)
    manifest = {
        "schema": RUN_SCHEMA,
        "command": [args.command] + ([args.verb] if getattr(args, "verb", None) else []),
        "argv": argv,
        "seed": args.seed,
        "threads": args.threads,
        "versions": versions(),
        "timings": {"started_unix": started, "elapsed_s": time.perf_counter() - t0},
        **record,
    }
    _write_json(Path(args.out) / "run.json", manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
