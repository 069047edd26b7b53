"""Command-line pipeline: simulate -> extract -> train -> localise -> evaluate.

Every command writes ``manifest.json`` to its output directory. Failures exit
non-zero with a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    DEFAULT_GRID,
    DEFAULT_PLATE,
    DEFAULT_SENSORS,
    Dataset,
    ImpactLocation,
    ImpactRecord,
    PlateGeometry,
    SensorArray,
    grid_locations,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    ExperimentConfig,
    LocalisationResult,
    inside_hull,
    run_experiment,
    summarize,
    temperature_scenario,
    write_cdf,
    write_report,
    write_results_csv,
)
from .extract import ExtractionConfig, extract_tdoa
from .fusion import compute_weights, fuse, fusion_report
from .gpr.model import MultitaskGPRegressor, Prediction, load_model, save_model
from .wavesim import GvpModel, NoiseModel, SyntheticSignal, simulate_dataset, synthesize_signals

logger = logging.getLogger("impactloc")


class ConfigError(ValueError):
    pass


class CLIError(RuntimeError):
    pass


SIMULATE_DEFAULTS = {
    "name": "dataset",
    "plate.lx": DEFAULT_PLATE.length_x,
    "plate.ly": DEFAULT_PLATE.length_y,
    "plate.h": DEFAULT_PLATE.thickness,
    "sensors": [list(s) for s in DEFAULT_SENSORS],
    "sensor_ids": None,
    "gvp.kind": "elliptical",
    "gvp.base_speed": 400.0,
    "gvp.omega_ref": 1.0,
    "gvp.anisotropy": 0.1,
    "gvp.table": None,
    "grid.nx": DEFAULT_GRID["nx"],
    "grid.ny": DEFAULT_GRID["ny"],
    "grid.spacing": DEFAULT_GRID["spacing"],
    "grid.origin": list(DEFAULT_GRID["origin"]),
    "locations": None,
    "omega": 1.0,
    "noise.sigma": 0.0,
    "temperature.alpha": 1.0,
    "condition": "REF",
    "repetitions": 1,
    "seed": 0,
    "signals.write": False,
    "signals.sample_rate": 200.0,
    "signals.snr_db": None,
}

EXTRACT_DEFAULTS = {
    "center_frequency": 1.0,
    "bandwidth": None,
    "threshold_fraction": 0.025,
    "smoothing_window": None,
    "filter_order": 4,
}

REPORT_DEFAULTS = {
    "scenario.alpha": 1.15,
    "scenario.sigma": 0.005,
    "scenario.omega": 1.0,
    "gvp.kind": "elliptical",
    "gvp.base_speed": 400.0,
    "gvp.omega_ref": 1.0,
    "gvp.anisotropy": 0.1,
    "gvp.table": None,
    "reference": None,
    "targets": None,
    "subset": "ri35",
    "sensors": None,
    "kernels": "rbf,cos,comp",
    "fuse": True,
    "full_variance": False,
    "input_std": "ss",
    "output_std": "fs",
    "max_iter": 5000,
    "lr": 0.1,
    "seed": 0,
}


def resolve_config(path, defaults: dict, overrides: dict | None = None) -> dict:
    """Merge a flat dotted-key JSON config over ``defaults``; unknown keys are errors."""
    cfg = dict(defaults)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(user) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        cfg.update(user)
    for k, v in (overrides or {}).items():
        if v is not None:
            cfg[k] = v
    return cfg


def digest_json(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def digest_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command_line: list
    config_digest: str
    seed: int
    input_digests: dict
    tool_version: str
    timestamp: str

    def write(self, out_dir):
        Path(out_dir, "manifest.json").write_text(json.dumps(asdict(self), indent=2), encoding="utf-8")


def write_manifest(out_dir, argv, config, seed, inputs=()):
    m = RunManifest(
        command_line=list(argv),
        config_digest=digest_json(config),
        seed=int(seed) if seed is not None else 0,
        input_digests={str(p): digest_file(p) for p in inputs if Path(p).is_file()},
        tool_version=__version__,
        timestamp=datetime.now(timezone.utc).isoformat(),
    )
    m.write(out_dir)
    return m


def parse_sensors(text):
    """``'1,2,3'`` (1-based) -> [0, 1, 2]."""
    if text is None or text == "":
        return None
    if isinstance(text, (list, tuple)):
        vals = [int(v) for v in text]
    else:
        vals = [int(v) for v in str(text).split(",") if v.strip()]
    if not vals or min(vals) < 1:
        raise ConfigError(f"invalid sensor list {text!r}; use 1-based indices like 1,2,3,4")
    return [v - 1 for v in vals]


def parse_kernels(text):
    ks = [k.strip().lower() for k in (text if isinstance(text, (list, tuple)) else str(text).split(","))]
    ks = [k for k in ks if k]
    bad = [k for k in ks if k not in ("rbf", "cos", "comp")]
    if not ks or bad:
        raise ConfigError(f"invalid kernel list {text!r}")
    return ks


def gvp_from_config(cfg) -> GvpModel:
    return GvpModel(cfg["gvp.kind"], float(cfg["gvp.base_speed"]), float(cfg["gvp.omega_ref"]),
                    float(cfg["gvp.anisotropy"]),
                    tuple(map(tuple, cfg["gvp.table"])) if cfg["gvp.table"] else None)


def cmd_simulate(args) -> int:
    cfg = resolve_config(args.config, SIMULATE_DEFAULTS, {"seed": args.seed})
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plate = PlateGeometry(float(cfg["plate.lx"]), float(cfg["plate.ly"]), float(cfg["plate.h"]))
    array = SensorArray(tuple(map(tuple, cfg["sensors"])), tuple(cfg["sensor_ids"] or ()))
    gvp = gvp_from_config(cfg)
    if cfg["locations"]:
        locs = [ImpactLocation(float(x), float(y)) for x, y in cfg["locations"]]
    else:
        locs = grid_locations(int(cfg["grid.nx"]), int(cfg["grid.ny"]), float(cfg["grid.spacing"]),
                              tuple(cfg["grid.origin"]))
    seed = int(cfg["seed"])
    noise_ss, signal_ss = np.random.SeedSequence(seed).spawn(2)
    noise = NoiseModel(float(cfg["noise.sigma"]), seed)
    d = simulate_dataset(gvp, array, plate, locs, float(cfg["omega"]), noise,
                         float(cfg["temperature.alpha"]), str(cfg["condition"]),
                         int(cfg["repetitions"]), rng=np.random.default_rng(noise_ss),
                         provenance=f"impactloc simulate config={digest_json(cfg)[:12]}")
    path = out / f"{cfg['name']}.csv"
    save_dataset(d, path)

    if cfg["signals.write"]:
        sig_dir = out / "signals"
        sig_dir.mkdir(exist_ok=True)
        snr = cfg["signals.snr_db"]
        snr = float("inf") if snr is None else float(snr)
        alpha = float(cfg["temperature.alpha"])
        g_sig = gvp.with_speed_factor(1.0 / alpha) if alpha != 1.0 else gvp
        seeds = signal_ss.generate_state(len(d.records))
        index = {"plate": {"lx": plate.length_x, "ly": plate.length_y, "h": plate.thickness},
                 "sensors": [list(s) for s in array.sensors], "ids": list(array.ids),
                 "sample_rate": float(cfg["signals.sample_rate"]), "impacts": []}
        for rec, s in zip(d.records, seeds):
            sigs = synthesize_signals(g_sig, array, rec.location, float(cfg["omega"]),
                                      float(cfg["signals.sample_rate"]), snr, int(s))
            idir = sig_dir / rec.impact_id
            idir.mkdir(exist_ok=True)
            for sid, sg in zip(array.ids, sigs):
                write_signal_csv(sg, idir / f"{sid}.csv")
            index["impacts"].append({"impact_id": rec.impact_id, "x": rec.location.x,
                                     "y": rec.location.y, "condition": rec.condition_tag,
                                     "repetition": rec.repetition})
        (sig_dir / "index.json").write_text(json.dumps(index, indent=2), encoding="utf-8")

    write_manifest(out, sys.argv, cfg, seed, [args.config] if args.config else [])
    print(json.dumps({"dataset": str(path), "records": len(d)}))
    return 0


def write_signal_csv(sig: SyntheticSignal, path):
    np.savetxt(path, np.c_[sig.times, sig.samples], delimiter=",", fmt="%.17g",
               header="t_ms,amp", comments="")


def read_signal_csv(path) -> SyntheticSignal:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2 or data.shape[1] != 2:
        raise CLIError(f"signal file {path} must have columns t_ms,amp and at least 2 rows")
    dt = np.diff(data[:, 0])
    if np.any(dt <= 0) or np.ptp(dt) > 1e-6 * dt.mean():
        raise CLIError(f"signal file {path} is not uniformly sampled")
    return SyntheticSignal(data[:, 1], 1.0 / dt.mean(), data[0, 0])


def cmd_extract(args) -> int:
    overrides = {"threshold_fraction": args.threshold, "center_frequency": args.frequency}
    cfg = resolve_config(args.config, EXTRACT_DEFAULTS, overrides)
    ecfg = ExtractionConfig(**cfg)
    sig_dir = Path(args.signals_dir)
    index_path = sig_dir / "index.json"
    if not index_path.exists():
        raise CLIError(f"missing signal index {index_path}")
    index = json.loads(index_path.read_text(encoding="utf-8"))
    plate = PlateGeometry(index["plate"]["lx"], index["plate"]["ly"], index["plate"]["h"])
    array = SensorArray(tuple(map(tuple, index["sensors"])), tuple(index["ids"]))
    records, failures = [], []
    for imp in index["impacts"]:
        idir = sig_dir / imp["impact_id"]
        try:
            sigs = []
            for sid in array.ids:
                f = idir / f"{sid}.csv"
                if not f.exists():
                    raise CLIError(f"missing signal file for sensor {sid}: {f}")
                sigs.append(read_signal_csv(f))
            tdoa = extract_tdoa(sigs, ecfg, array.ids)
        except (CLIError, ValueError) as exc:
            failures.append(f"{imp['impact_id']}: {exc}")
            continue
        records.append(ImpactRecord(ImpactLocation(imp["x"], imp["y"]), tdoa, imp["condition"],
                                    int(imp["repetition"]), imp["impact_id"]))
    if failures:
        raise CLIError("extraction failed for: " + "; ".join(failures))

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if args.append and out_path.exists():
        old = load_dataset(out_path)
        records = list(old.records) + records
    d = Dataset(plate, array, tuple(records), f"impactloc extract threshold={ecfg.threshold_fraction}")
    save_dataset(d, out_path)
    write_manifest(out_path.parent, sys.argv, cfg, 0, [index_path])
    print(json.dumps({"dataset": str(out_path), "records": len(d)}))
    return 0


def cmd_train(args) -> int:
    from .evaluation import subset_reference

    kernels = parse_kernels(args.kernels)
    sensors = parse_sensors(args.sensors)
    cfg = {"reference": str(args.reference), "kernels": kernels, "sensors": sensors,
           "subset": args.subset, "input_std": args.input_std, "output_std": args.output_std,
           "max_iter": args.max_iter, "lr": args.lr, "seed": args.seed,
           "noise_variance": args.noise_variance}
    d = load_dataset(args.reference)
    if args.subset != "all":
        d = subset_reference(d, args.subset)
    if sensors is not None:
        d = d.with_sensors(sensors)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lmls = {}
    for k in kernels:
        m = MultitaskGPRegressor(kernel=k, input_std=args.input_std, output_std=args.output_std,
                                 learning_rate=args.lr, max_iter=args.max_iter, random_state=args.seed,
                                 noise_variance=args.noise_variance)
        try:
            m.fit(d.X, d.Y)
        except Exception as exc:
            raise CLIError(f"training kernel {k!r} failed: {exc}") from exc
        m.metadata_ = {"sensor_subset": sensors, "sensor_ids": list(d.array.ids),
                       "train_locations": d.Y.tolist(), "subset": args.subset}
        save_model(m, out / f"model_{k}.json")
        lmls[k] = m.log_marginal_likelihood_value_
    write_manifest(out, sys.argv, cfg, args.seed, [args.reference])
    print(json.dumps({"log_marginal_likelihood": lmls}))
    return 0


PRED_HEADER = ["impact_id", "kernel", "x_mm", "y_mm", "var_x", "var_y", "weight_x", "weight_y",
               "inside_hull"]


def cmd_localise(args) -> int:
    targets = load_dataset(args.targets)
    models = {}
    metas = {}
    for p in args.models:
        m = load_model(p)
        label = m.kernel_.kind
        if label in models:
            label = Path(p).stem
        models[label] = m
        metas[label] = getattr(m, "metadata_", {}) or {}
    first = next(iter(metas.values()))
    sensors = first.get("sensor_subset")
    if any(mt.get("sensor_subset") != sensors for mt in metas.values()):
        raise CLIError("models were trained on different sensor subsets")
    if sensors is not None and max(sensors) >= len(targets.array):
        raise CLIError(f"models expect sensors {[i + 1 for i in sensors]}, "
                       f"targets have only {len(targets.array)}")
    tgt = targets.with_sensors(sensors) if sensors is not None else targets
    for label, m in models.items():
        if m.n_features_in_ != len(tgt.array):
            raise CLIError(f"model {label} expects {m.n_features_in_} sensors, targets have {len(tgt.array)}")
        trained_ids = (metas[label].get("sensor_ids") or list(tgt.array.ids))
        if list(trained_ids) != list(tgt.array.ids):
            raise CLIError(f"model {label} was trained on sensors {trained_ids}, "
                           f"targets provide {list(tgt.array.ids)}")
    hull = inside_hull(tgt.Y, np.asarray(first.get("train_locations") or np.empty((0, 2))))

    preds = {k: m.predict_distribution(tgt.X) for k, m in models.items()}
    lmls = [m.log_marginal_likelihood_value_ for m in models.values()]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    fused = None
    if args.fuse:
        fused = fuse(list(preds.values()), compute_weights(list(models), lmls, list(preds.values())),
                     args.full_variance)
        report = fusion_report(fused, lmls, tgt.impact_ids)
        (out / "fusion_report.json").write_text(json.dumps(report, indent=2), encoding="utf-8")
    for j, (k, p) in enumerate(preds.items()):
        w = fused.weights.w_combined[j] if fused is not None else np.full_like(p.mean, np.nan)
        rows += _pred_rows(tgt.impact_ids, k, p, w, hull)
    if fused is not None:
        rows += _pred_rows(tgt.impact_ids, "bma", Prediction(fused.mean, fused.variance),
                           np.ones_like(fused.mean), hull)
    path = out / "predictions.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PRED_HEADER)
        w.writerows(rows)
    write_manifest(out, sys.argv, {"models": [str(p) for p in args.models], "fuse": args.fuse,
                                   "full_variance": args.full_variance}, 0,
                   [args.targets, *args.models])
    print(json.dumps({"predictions": str(path), "targets": len(tgt)}))
    return 0


def _pred_rows(ids, label, p, w, hull):
    return [[iid, label, repr(float(p.mean[i, 0])), repr(float(p.mean[i, 1])),
             repr(float(p.variance[i, 0])), repr(float(p.variance[i, 1])),
             repr(float(w[i, 0])), repr(float(w[i, 1])), int(hull[i])]
            for i, iid in enumerate(ids)]


def read_predictions(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(PRED_HEADER) - set(reader.fieldnames):
            raise CLIError(f"{path} is not a predictions file")
        return list(reader)


def cmd_evaluate(args) -> int:
    truth = load_dataset(args.truth)
    loc = {r.impact_id: (r.location.x, r.location.y) for r in truth.records}
    rows = read_predictions(args.predictions)
    unmatched = sorted({r["impact_id"] for r in rows} - set(loc))
    if unmatched:
        raise CLIError(f"predictions with no ground truth: {', '.join(unmatched)}")
    results = [LocalisationResult(r["impact_id"], r["kernel"], loc[r["impact_id"]],
                                  (float(r["x_mm"]), float(r["y_mm"])),
                                  (float(r["var_x"]) ** 0.5, float(r["var_y"]) ** 0.5),
                                  bool(int(r["inside_hull"])))
               for r in rows]
    if not results:
        raise CLIError("no predictions to evaluate")
    labels = list(dict.fromkeys(r.kernel for r in results))
    summary = {lab: summarize([r for r in results if r.kernel == lab]) for lab in labels}
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")
    write_results_csv(results, out / "results.csv")
    write_cdf(results, out / "cdf.csv", None if args.no_svg else out / "cdf.svg")
    write_manifest(out, sys.argv, {"predictions": str(args.predictions), "truth": str(args.truth)}, 0,
                   [args.predictions, args.truth])
    print(json.dumps({k: {"mean": v["mean"], "max": v["max"]} for k, v in summary.items()}))
    return 0


def cmd_report(args) -> int:
    overrides = {"seed": args.seed, "subset": args.subset, "sensors": args.sensors,
                 "kernels": args.kernels, "input_std": args.input_std,
                 "output_std": args.output_std, "max_iter": args.max_iter}
    if args.fuse is not None:
        overrides["fuse"] = args.fuse
    cfg = resolve_config(args.config, REPORT_DEFAULTS, overrides)
    inputs = []
    if cfg["reference"] and cfg["targets"]:
        ref, tgt = load_dataset(cfg["reference"]), load_dataset(cfg["targets"])
        inputs = [cfg["reference"], cfg["targets"]]
    else:
        ref, tgt = temperature_scenario(float(cfg["scenario.alpha"]), float(cfg["scenario.sigma"]),
                                        int(cfg["seed"]), gvp_from_config(cfg),
                                        float(cfg["scenario.omega"]))
    ecfg = ExperimentConfig(reference_subset=cfg["subset"], sensor_subset=parse_sensors(cfg["sensors"]),
                            kernels=tuple(parse_kernels(cfg["kernels"])), fusion=bool(cfg["fuse"]),
                            input_std=cfg["input_std"], output_std=cfg["output_std"],
                            learning_rate=float(cfg["lr"]), max_iter=int(cfg["max_iter"]),
                            full_variance=bool(cfg["full_variance"]), seed=int(cfg["seed"]))
    report = run_experiment(ecfg, ref, tgt)
    out = Path(args.out_dir)
    paths = write_report(report, out, svg=not args.no_svg)
    write_manifest(out, sys.argv, cfg, cfg["seed"], [p for p in [args.config, *inputs] if p])
    print(json.dumps({k: round(v["mean"], 4) for k, v in report.summaries.items()}))
    return 0 if paths else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="impactloc", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate an analytic TDOA dataset (and optional waveforms)")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("extract", help="pick TDOAs from per-sensor signal CSVs")
    s.add_argument("--signals-dir", required=True)
    s.add_argument("--config")
    s.add_argument("--threshold", type=float, help="threshold fraction, e.g. 0.025 or 0.0025")
    s.add_argument("--frequency", type=float, help="centre frequency in kHz")
    s.add_argument("--out", required=True, help="dataset CSV to write")
    s.add_argument("--append", action="store_true")
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("train", help="fit one GP model per kernel")
    s.add_argument("--reference", required=True)
    s.add_argument("--kernels", default="rbf,cos,comp")
    s.add_argument("--input-std", default="ss", choices=["ss", "fs", "none"])
    s.add_argument("--output-std", default="fs", choices=["fs", "none"])
    s.add_argument("--sensors")
    s.add_argument("--subset", default="all", choices=["all", "ri35", "ri15", "ri9", "ext9"],
                   help="reference subset; named subsets need a 7 x 5 grid")
    s.add_argument("--max-iter", type=int, default=5000)
    s.add_argument("--lr", type=float, default=0.1)
    s.add_argument("--noise-variance", type=float,
                   help="fix the noise variance (standardised output units) instead of training it")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("localise", help="predict target locations, optionally fused")
    s.add_argument("--models", nargs="+", required=True)
    s.add_argument("--targets", required=True)
    s.add_argument("--fuse", action="store_true")
    s.add_argument("--full-variance", action="store_true",
                   help="add the between-kernel spread to the fused variance")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_localise)

    s = sub.add_parser("evaluate", help="score predictions against ground truth")
    s.add_argument("--predictions", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("report", help="run a full experiment (synthetic temperature scenario by default)")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--subset", choices=["ri35", "ri15", "ri9", "ext9"])
    s.add_argument("--sensors")
    s.add_argument("--kernels")
    s.add_argument("--input-std", choices=["ss", "fs", "none"])
    s.add_argument("--output-std", choices=["fs", "none"])
    s.add_argument("--fuse", action=argparse.BooleanOptionalAction, default=None)
    s.add_argument("--max-iter", type=int)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except Exception as exc:  # report every failure as machine-readable JSON
        if args.verbose:
            logger.exception("command failed")
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc),
                                     "command": args.command}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
