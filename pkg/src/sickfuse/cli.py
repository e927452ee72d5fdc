"""`sickfuse` command-line entry point.

Subcommands cover the whole pipeline: synth, preprocess, train, cv, predict,
stats, heatmap. Config files are plain key=value; every file key has a flag
of the same name (dashes for underscores) and flags win over file values.
Each run writes a manifest.json (command, resolved config, seeds, inputs,
output checksums) sufficient to reproduce its outputs.

Exit codes: 0 success, 2 bad configuration, 3 data validation failure,
4 training divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import ingest, stats, synth, windows_io
from .errors import (ConfigError, ContractError, DataError, DivergenceError,
                     ShapeError, SickfuseError)
from .kvconfig import load_kv
from .labeling import build_windows, classify_severity, compute_fms_quantiles, \
    compute_norm_stats, window_to_model_inputs
from .model import (ModelConfig, build_model, config_from_kv, load_model,
                    predict, save_model)
from .rng import seed_stream
from .trainer import TrainConfig, build_dataset, classification_targets, run_cv, train


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, args: dict, out_dir: Path):
        self.data = {
            "command": command,
            "argv": sys.argv[1:],
            "config": {k: str(v) for k, v in args.items()},
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "inputs": [],
            "outputs": {},
        }
        self.out_dir = Path(out_dir)

    def add_input(self, path):
        self.data["inputs"].append(str(path))

    def write(self):
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        outputs = {}
        for path in sorted(self.out_dir.rglob("*")):
            if path.is_file() and path.name != "manifest.json":
                outputs[str(path.relative_to(self.out_dir))] = _sha256(path)
        self.data["outputs"] = outputs
        self.out_dir.mkdir(parents=True, exist_ok=True)
        with open(self.out_dir / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# config assembly: file values overridden by flags of the same name
# ---------------------------------------------------------------------------

def _add_kv_flags(parser, dataclass_type):
    for f in fields(dataclass_type):
        parser.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name,
                            default=None, metavar="V")


def _merge_kv(config_path, args, dataclass_type):
    pairs = dict(load_kv(config_path)) if config_path else {}
    for f in fields(dataclass_type):
        value = getattr(args, f.name, None)
        if value is not None:
            pairs[f.name] = value
    return pairs


def _train_config_from_kv(pairs: dict) -> TrainConfig:
    known = {f.name for f in fields(TrainConfig)}
    kwargs = {}
    ints = {"epochs", "batch_size", "patience", "folds", "seed"}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown train config key {key!r}")
        kwargs[key] = int(raw) if key in ints else float(raw)
    return TrainConfig(**kwargs)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    profile = synth.profile_from_kv(_merge_kv(args.profile, args, synth.SynthProfile))
    out = Path(args.out)
    manifest = Manifest("synth", synth.profile_to_kv(profile), out)
    if args.profile:
        manifest.add_input(args.profile)
    synth.generate_dataset(profile, out)
    manifest.write()
    print(f"wrote {profile.participants * len(profile.simulations)} sessions to {out}")
    return 0


def _session_dirs(data_dir: Path):
    return sorted(p.parent for p in Path(data_dir).glob("*/*/eye.csv"))


def cmd_preprocess(args) -> int:
    data_dir = Path(args.data)
    cache_dir = Path(args.cache)
    timestep = int(args.timestep)
    max_disparity = int(args.max_disparity)
    budget = float(args.invalid_budget)
    manifest = Manifest("preprocess", {"data": str(data_dir), "cache": str(cache_dir),
                                       "timestep": timestep,
                                       "max_disparity": max_disparity,
                                       "invalid_budget": budget}, cache_dir)
    session_dirs = _session_dirs(data_dir)
    if not session_dirs:
        raise DataError(f"no sessions under {data_dir}")
    all_windows, all_dropped = [], []
    for session_dir in session_dirs:
        manifest.add_input(session_dir)
        record = ingest.align_streams(ingest.parse_session(session_dir))
        windows, dropped = build_windows(record, invalid_budget=budget)
        for w in windows:
            if w.frames_left is not None:
                w.precomputed = {
                    key: window_to_model_inputs(
                        w, timestep=timestep, modalities=(key,),
                        max_disparity=max_disparity)[key]
                    for key in ("video", "flow", "disparity")}
                w.frames_left = w.frames_right = None
        all_windows.extend(windows)
        all_dropped.extend(dropped)
    windows_io.save_cache(cache_dir, all_windows, all_dropped,
                          extra_meta={"timestep": timestep,
                                      "max_disparity": max_disparity})
    manifest.write()
    print(f"cached {len(all_windows)} windows ({len(all_dropped)} dropped) "
          f"from {len(session_dirs)} sessions")
    return 0


def _load_configs(args):
    model_cfg = config_from_kv(_merge_kv(args.model_config, args, ModelConfig))
    train_cfg = _train_config_from_kv(_merge_kv(args.train_config, args, TrainConfig))
    return model_cfg, train_cfg


def cmd_train(args) -> int:
    model_cfg, train_cfg = _load_configs(args)
    out = Path(args.out)
    manifest = Manifest("train", {**model_cfg.to_kv(),
                                  **{f.name: getattr(train_cfg, f.name)
                                     for f in fields(TrainConfig)}}, out)
    manifest.add_input(args.cache)
    windows = windows_io.load_cache(args.cache)
    if not windows:
        raise DataError("window cache is empty")
    per_session, pooled = compute_norm_stats(windows)
    data = build_dataset(windows, model_cfg, per_session, pooled)
    if model_cfg.task == "classification":
        quantiles = compute_fms_quantiles(data.fms)
        _, targets = classification_targets(data.fms, quantiles)
    else:
        targets = data.fms.reshape(-1, 1)
    init_seed = int(seed_stream(train_cfg.seed, "train.init").integers(2 ** 31))
    model = build_model(model_cfg, seed=init_seed)
    history = train(model, data, targets, train_cfg)
    save_model(out, model, per_session, pooled)
    with open(out / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for i, (tl, vl) in enumerate(zip(history.train_loss, history.val_loss), 1):
            fh.write(f"{i},{tl:.9f},{vl:.9f}\n")
    manifest.write()
    print(f"trained to epoch {history.stop_epoch} "
          f"(best {history.best_epoch}); saved to {out}")
    return 0


def cmd_cv(args) -> int:
    model_cfg, train_cfg = _load_configs(args)
    out = Path(args.out)
    manifest = Manifest("cv", {**model_cfg.to_kv(),
                               **{f.name: getattr(train_cfg, f.name)
                                  for f in fields(TrainConfig)}}, out)
    manifest.add_input(args.cache)
    windows = windows_io.load_cache(args.cache)
    report = run_cv(windows, model_cfg, train_cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "summary.txt").write_text(report.summary(), encoding="utf-8")
    with open(out / "history.csv", "w", encoding="utf-8") as fh:
        fh.write("fold,epoch,train_loss,val_loss\n")
        for i, h in enumerate(report.histories):
            for e, (tl, vl) in enumerate(zip(h.train_loss, h.val_loss), 1):
                fh.write(f"{i},{e},{tl:.9f},{vl:.9f}\n")
    with open(out / "hygiene.json", "w", encoding="utf-8") as fh:
        json.dump(report.hygiene, fh, indent=1)
        fh.write("\n")
    manifest.write()
    print(report.summary(), end="")
    return 0


def cmd_predict(args) -> int:
    out_path = Path(args.out)
    model, per_session, pooled = load_model(args.checkpoint)
    windows = windows_io.load_cache(args.cache)
    if args.windows:
        wanted = set(args.windows.split(","))
        windows = [w for w in windows if w.window_id in wanted]
        if not windows:
            raise DataError(f"no cached windows match {sorted(wanted)}")
    manifest = Manifest("predict", {"checkpoint": args.checkpoint,
                                    "cache": args.cache,
                                    "windows": args.windows or "all"},
                        out_path.parent)
    manifest.add_input(args.checkpoint)
    manifest.add_input(args.cache)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_id", "participant", "simulation", "t_report",
                         "true_fms", "prediction", "raw"])
        for w in windows:
            norm = per_session.get(w.session_key, pooled)
            inputs = window_to_model_inputs(
                w, timestep=cfg.timestep, norm=norm, modalities=cfg.modalities,
                selection=cfg.selection, max_disparity=cfg.max_disparity)
            result = predict(model, inputs)
            if cfg.task == "classification":
                writer.writerow([w.window_id, w.participant_id, w.simulation,
                                 w.t_report, w.fms, result.severity,
                                 " ".join(f"{p:.6f}" for p in result.probabilities)])
            else:
                writer.writerow([w.window_id, w.participant_id, w.simulation,
                                 w.t_report, w.fms, f"{result.fms:.4f}",
                                 f"{result.fms_raw:.6f}"])
    manifest.write()
    print(f"wrote predictions for {len(windows)} windows to {out_path}")
    return 0


STATS_FEATURES = ("gaze_x_mean", "gaze_y_mean", "pupil_mean", "gaze_dispersion",
                  "head_w_mean")


def cmd_stats(args) -> int:
    out = Path(args.out)
    threshold = float(args.threshold)
    manifest = Manifest("stats", {"cache": args.cache, "threshold": threshold}, out)
    manifest.add_input(args.cache)
    windows = windows_io.load_cache(args.cache)
    if not windows:
        raise DataError("window cache is empty")
    out.mkdir(parents=True, exist_ok=True)
    for feature in STATS_FEATURES:
        groups = {g.simulation: g
                  for g in stats.group_by_sickness(windows, feature, threshold)}
        results = stats.sickness_ttest(windows, feature, threshold)
        with open(out / f"ttest_{feature}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["simulation", "n_pairs", "mean_nonsick", "sd_nonsick",
                             "mean_sick", "sd_sick", "t", "df", "p"])
            for sim, group in sorted(groups.items()):
                r = results.get(sim)
                if r is None:
                    writer.writerow([sim, len(group.participants)] + [""] * 7)
                else:
                    writer.writerow([sim, r.n, f"{r.mean_a:.6f}", f"{r.sd_a:.6f}",
                                     f"{r.mean_b:.6f}", f"{r.sd_b:.6f}",
                                     f"{r.t:.6f}", r.df, f"{r.p:.6g}"])
    manifest.write()
    print(f"wrote {len(STATS_FEATURES)} t-test tables to {out}")
    return 0


def cmd_heatmap(args) -> int:
    out = Path(args.out)
    threshold = float(args.threshold)
    grid = int(args.grid)
    manifest = Manifest("heatmap", {"data": args.data,
                                    "participant": args.participant,
                                    "simulation": args.simulation,
                                    "threshold": threshold, "grid": grid}, out)
    session_dir = Path(args.data) / args.participant / args.simulation
    manifest.add_input(session_dir)
    record = ingest.align_streams(ingest.parse_session(session_dir))
    windows, _ = build_windows(record)
    sick = [w for w in windows if w.fms > threshold]
    calm = [w for w in windows if w.fms <= threshold]
    out.mkdir(parents=True, exist_ok=True)
    for name, group in (("sick", sick), ("nonsick", calm)):
        if group:
            intensity, _ = stats.gaze_heatmap(stats.gaze_samples(group), grid)
        else:
            intensity = np.zeros((grid, grid))
        stats.write_pgm(out / f"gaze_{name}.pgm", intensity)
    manifest.write()
    print(f"wrote gaze_sick.pgm ({len(sick)} windows) and gaze_nonsick.pgm "
          f"({len(calm)} windows) to {out}")
    return 0


# ---------------------------------------------------------------------------
# parser / entry point
# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sickfuse",
                                     description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset tree")
    p.add_argument("--profile", default=None, help="key=value profile file")
    p.add_argument("--out", required=True)
    _add_kv_flags(p, synth.SynthProfile)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="parse, align, window, and cache")
    p.add_argument("--data", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--timestep", default="60")
    p.add_argument("--max-disparity", dest="max_disparity", default="64")
    p.add_argument("--invalid-budget", dest="invalid_budget", default="0.2")
    p.set_defaults(func=cmd_preprocess)

    for name, func, help_text in (("train", cmd_train, "train one model"),
                                  ("cv", cmd_cv, "k-fold cross-validation")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--cache", required=True)
        p.add_argument("--model-config", dest="model_config", default=None)
        p.add_argument("--train-config", dest="train_config", default=None)
        p.add_argument("--out", required=True)
        _add_kv_flags(p, ModelConfig)
        _add_kv_flags(p, TrainConfig)
        p.set_defaults(func=func)

    p = sub.add_parser("predict", help="predict cached windows with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--windows", default=None, help="comma-separated window ids")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("stats", help="sickness/non-sickness paired t-test tables")
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", default="2.0")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("heatmap", help="per-condition gaze heatmaps (PGM)")
    p.add_argument("--data", required=True)
    p.add_argument("--participant", required=True)
    p.add_argument("--simulation", required=True)
    p.add_argument("--threshold", default="2.0")
    p.add_argument("--grid", default="64")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_heatmap)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (DataError, ShapeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (ConfigError, ContractError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except SickfuseError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
