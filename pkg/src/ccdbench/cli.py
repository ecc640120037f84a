"""Command-line entry point: simulate, render and sweep."""

import argparse
import os
import sys

import numpy as np

from . import io as io_mod
from . import montecarlo as mc
from . import render as render_mod


def _apply_overrides(cfg, args):
    if args.seed is not None:
        cfg.campaign_seed = args.seed
    if args.out is not None:
        cfg.output_dir = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    if args.detectors is not None:
        cfg.detectors = tuple(args.detectors.split(","))
    return cfg


def _store_top_trial(cfg, records, out_dir):
    """Re-run the highest-visibility trial keeping artifacts and write its
    feature/score rasters, truth mask and ROC/PR point files."""
    best = max(records, key=lambda r: r.visibility)
    record = mc.run_trial(best.params, cfg.detectors, cfg.pipeline,
                          keep_artifacts=True)
    trial_dir = os.path.join(out_dir, "top_trial")
    os.makedirs(trial_dir, exist_ok=True)
    io_mod.write_raster(os.path.join(trial_dir, "features.rst"),
                        record.stack.planes)
    io_mod.write_raster(
        os.path.join(trial_dir, "scores.rst"),
        {name: smap.scores for name, smap in record.score_maps.items()
         if name in cfg.detectors})
    io_mod.write_raster(os.path.join(trial_dir, "truth.rst"),
                        {"change_mask": record.truth.astype(float)})
    for name, smap in record.score_maps.items():
        if name not in cfg.detectors:
            continue
        valid = smap.valid_mask
        io_mod.write_curve_csv(
            os.path.join(trial_dir, f"roc_{name}.csv"), ["pfa", "pd"],
            render_mod.roc_points(smap.scores[valid], record.truth[valid]))
        io_mod.write_curve_csv(
            os.path.join(trial_dir, f"pr_{name}.csv"), ["recall", "precision"],
            render_mod.pr_points(smap.scores[valid], record.truth[valid]))
    return trial_dir


def cmd_simulate(args):
    try:
        cfg = _apply_overrides(io_mod.load_config(args.config), args)
    except io_mod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    os.makedirs(cfg.output_dir, exist_ok=True)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    records, failures = mc.run_campaign(
        cfg.campaign_seed, cfg.n_trials, cfg.detectors, cfg.pipeline,
        cfg.ranges, cfg.scenarios, workers=cfg.workers, log=log)
    for msg in failures:
        print(f"warning: {msg}", file=sys.stderr)

    io_mod.write_trials_csv(os.path.join(cfg.output_dir, "trials.csv"),
                            records, cfg.detectors)
    if len(records) >= 2:
        summary = mc.aggregate(records)
        summary.n_failed = len(failures)
        io_mod.write_summary_csv(os.path.join(cfg.output_dir, "summary.csv"),
                                 summary)
    if records:
        _store_top_trial(cfg, records, cfg.output_dir)

    if len(records) < 0.9 * cfg.n_trials:
        print(f"error: only {len(records)}/{cfg.n_trials} trials succeeded",
              file=sys.stderr)
        return 1
    return 0


def cmd_render(args):
    try:
        render_mod.render_trial(args.trial_dir, args.out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def cmd_sweep(args):
    try:
        cfg = _apply_overrides(io_mod.load_config(args.config), args)
    except io_mod.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if cfg.sweep is None:
        print("error: config has no sweep section", file=sys.stderr)
        return 2

    os.makedirs(cfg.output_dir, exist_ok=True)
    log = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    results = mc.sweep_campaign(
        cfg.campaign_seed, cfg.sweep["factor"], cfg.sweep["levels"],
        cfg.sweep["trials_per_level"], cfg.detectors, cfg.pipeline,
        cfg.ranges, cfg.scenarios, workers=cfg.workers, log=log)

    factor = cfg.sweep["factor"]
    stats_by_level = {}
    rows = []
    for level, (records, failures) in results.items():
        summary = mc.aggregate(records)
        stats_by_level[level] = summary.stats
        for det, metrics in summary.stats.items():
            row = [level, det]
            for metric in ("roc_auc", "ap", "f1"):
                row += list(metrics[metric])
            rows.append(row)
    path = os.path.join(cfg.output_dir, f"sweep_{factor}.csv")
    io_mod.write_rows_csv(path, ["level", "detector",
                                       "roc_auc_mean", "roc_auc_lo", "roc_auc_hi",
                                       "ap_mean", "ap_lo", "ap_hi",
                                       "f1_mean", "f1_lo", "f1_hi"], rows)
    for metric in ("roc_auc", "ap"):
        render_mod.render_sweep(
            cfg.sweep["levels"], stats_by_level, factor, metric,
            list(cfg.detectors),
            os.path.join(cfg.output_dir, f"sweep_{factor}_{metric}.png"))
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ccdbench",
        description="Physics-informed change-detection simulator and benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo campaign")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--workers", type=int, default=None)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--detectors", default=None,
                       help="comma-separated detector names")
    p_sim.add_argument("--verbose", action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_ren = sub.add_parser("render", help="render figures for a stored trial")
    p_ren.add_argument("trial_dir")
    p_ren.add_argument("--out", default=None)
    p_ren.set_defaults(func=cmd_render)

    p_swp = sub.add_parser("sweep", help="run a one-factor sweep campaign")
    p_swp.add_argument("--config", required=True)
    p_swp.add_argument("--out", default=None)
    p_swp.add_argument("--workers", type=int, default=None)
    p_swp.add_argument("--seed", type=int, default=None)
    p_swp.add_argument("--detectors", default=None)
    p_swp.add_argument("--verbose", action="store_true")
    p_swp.set_defaults(func=cmd_sweep)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
