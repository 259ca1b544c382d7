"""
Command Line
============
Single entry point for data generation, detection, initialization, tracking,
evaluation and benchmarking.

SUBCOMMANDS:
    synth   write a synthetic events CSV, model, intrinsics and ground truth
    detect  detect lines in one event window
    init    correspondence-free initial pose from detected lines
    track   track a model through an event stream
    eval    ATE of an estimated trajectory against ground truth
    bench   seeded estimator benchmark over a registered sweep

EXIT CODES:
    0 success, 2 input or config error, 3 estimation failure

ENVIRONMENT:
    EVPOSE_THREADS caps the worker threads used by bench (default 1)
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from config import RunConfig, SweepSpec
from data_io import (
    load_intrinsics,
    load_lines,
    load_model,
    load_run_config,
    load_validated,
    read_events,
    read_tum,
    write_events,
    write_intrinsics,
    write_json,
    write_model,
    write_rows,
    write_tum,
)
from errors import ConfigError, PoseEstimationError
from event_windowing import cluster_events
from line_detection import detect_lines
from matching import Twist
from parameter_registry import SWEEP_REGISTRY, parse_estimator
from pose_init import initial_pose
from pose_optimizer import track
from synthetic import TrajectorySpec, generate_events, generate_scene, run_sweep
from trajectory_metrics import Trajectory, ate_rmse


logger = logging.getLogger("evpose")

TRACK_LOG_COLUMNS = ["t_center", "n_events", "n_assigned", "n_rejected", "iterations", "cost", "coasting"]
ATE_COLUMNS = ["rmse", "normalized_rmse", "extent", "n_poses"]
REPORT_STATS = ["median_err_r", "mean_err_r", "median_err_t", "mean_err_t", "failed"]


# ============================================================================
# HELPERS
# ============================================================================

def _configure_logging(args) -> None:
    level = logging.INFO
    if args.quiet:
        level = logging.WARNING
    elif args.verbose:
        level = logging.DEBUG
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = cfg.model_copy(update={
            "seed": args.seed,
            "synth": cfg.synth.model_copy(update={"seed": args.seed}),
            "detection": cfg.detection.model_copy(update={"seed": args.seed}),
        })
    return cfg


def _threads() -> int:
    raw = os.environ.get("EVPOSE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"EVPOSE_THREADS must be an integer, got '{raw}'")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ============================================================================
# SUBCOMMANDS
# ============================================================================

def cmd_synth(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(args.out)

    model, pose0 = generate_scene(cfg.synth)
    traj_cfg = cfg.trajectory
    traj = TrajectorySpec(
        pose0=pose0,
        twist=Twist(w=traj_cfg.angular_velocity, v=traj_cfg.linear_velocity),
        duration=traj_cfg.duration,
        window_rate=traj_cfg.window_rate,
    )
    labeled = generate_events(model, traj, cfg.synth.image, cfg.synth)
    centers = np.array([c.t_center for c in cluster_events(labeled.events, cfg.window)])

    write_events(out / "events.csv", labeled.events)
    write_events(out / "events_labeled.csv", labeled.events, labeled.labels)
    write_model(out / "model.json", model)
    write_intrinsics(out / "intrinsics.json", cfg.synth.image)
    write_tum(out / "truth.tum", traj.ground_truth(centers))
    logger.info("synth events=%d lines=%d windows=%d out=%s", len(labeled), len(model.lines), len(centers), out)
    return 0


def cmd_detect(args) -> int:
    cfg = _load_config(args)
    stream, _ = read_events(args.events)
    clusters = cluster_events(stream, cfg.window)
    if not (0 <= args.window < len(clusters)):
        raise ConfigError(f"Window {args.window} out of range; stream has {len(clusters)} windows")
    lines = detect_lines(clusters[args.window], cfg.detection)
    write_json(args.out, [d.to_dict() for d in lines])
    logger.info("detect window=%d lines=%d out=%s", args.window, len(lines), args.out)
    return 0


def cmd_init(args) -> int:
    cfg = _load_config(args)
    result = initial_pose(load_lines(args.lines), load_model(args.model), load_intrinsics(args.intrinsics), cfg.bnb)
    write_json(args.out, result.to_dict())
    logger.info(
        "init count=%d residual=%.3f low_confidence=%s out=%s",
        result.achieved_count, result.mean_residual, result.low_confidence, args.out,
    )
    return 0


def cmd_track(args) -> int:
    cfg = _load_config(args)
    kind = parse_estimator(args.estimator)
    model = load_model(args.model)
    K = load_intrinsics(args.intrinsics)
    stream, _ = read_events(args.events, K)
    start_pose = None
    if args.start_pose:
        start = read_tum(args.start_pose)
        if len(start) == 0:
            raise ConfigError(f"{args.start_pose}: no poses")
        start_pose = start.pose(0)

    records = track(stream, model, K, kind, cfg, start_pose)
    write_tum(args.out, Trajectory.from_poses([r.t_center for r in records], [r.pose for r in records]))
    log_path = args.log or str(Path(args.out).with_suffix(".log.csv"))
    write_rows(log_path, [r.log_row() for r in records], TRACK_LOG_COLUMNS)
    return 0


def cmd_eval(args) -> int:
    result = ate_rmse(read_tum(args.estimated), read_tum(args.truth))
    row = {
        "rmse": repr(result.rmse),
        "normalized_rmse": repr(result.normalized_rmse),
        "extent": repr(result.extent),
        "n_poses": result.n_poses,
    }
    if args.out:
        write_rows(args.out, [row], ATE_COLUMNS)
    else:
        print(",".join(ATE_COLUMNS))
        print(",".join(str(row[c]) for c in ATE_COLUMNS))
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if args.spec:
        spec = load_validated(args.spec, SweepSpec)
    else:
        spec = SweepSpec.from_registry(args.sweep)
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.outlier_mode is not None:
        overrides["outlier_mode"] = args.outlier_mode
    if args.estimator:
        overrides["estimators"] = [parse_estimator(e) for e in args.estimator]
    if overrides:
        spec = SweepSpec(**{**spec.model_dump(), **overrides})

    rows = run_sweep(spec, base=cfg.synth, ocfg=cfg.opt, threads=_threads())
    formatted = [
        {**row, **{k: repr(row[k]) for k in REPORT_STATS if isinstance(row[k], float)}}
        for row in rows
    ]
    write_rows(args.out, formatted, [spec.parameter, "estimator"] + REPORT_STATS)
    logger.info("bench sweep=%s rows=%d out=%s", spec.name, len(rows), args.out)
    return 0


# ============================================================================
# PARSER
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Run config JSON (missing fields take defaults)")
    common.add_argument("--seed", type=int, help="Override every seed in the config")
    common.add_argument("--quiet", action="store_true", help="Only warnings and errors on stderr")
    common.add_argument("--verbose", action="store_true", help="Debug logging on stderr")

    parser = argparse.ArgumentParser(prog="evpose", description="Event-based object pose estimation and tracking")
    parser.add_argument("--print-config", action="store_true", help="Print the effective run config and exit")
    parser.add_argument("--config", dest="global_config", help=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("detect", parents=[common], help="Detect lines in one window")
    p.add_argument("--events", required=True)
    p.add_argument("--window", type=int, default=0, help="Window index (default 0)")
    p.add_argument("--out", required=True, help="Lines JSON")
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("init", parents=[common], help="Initial pose without correspondences")
    p.add_argument("--lines", required=True, help="Lines JSON from detect")
    p.add_argument("--model", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--out", required=True, help="Pose JSON")
    p.set_defaults(handler=cmd_init)

    p = sub.add_parser("track", parents=[common], help="Track a model through an event stream")
    p.add_argument("--events", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--intrinsics", required=True)
    p.add_argument("--estimator", default="mm", help="ls, m, s or mm (default mm)")
    p.add_argument("--start-pose", help="TUM file whose first pose is used at the first window")
    p.add_argument("--out", required=True, help="Trajectory (TUM)")
    p.add_argument("--log", help="Per-window log CSV (default <out>.log.csv)")
    p.set_defaults(handler=cmd_track)

    p = sub.add_parser("eval", parents=[common], help="ATE of an estimated trajectory")
    p.add_argument("--estimated", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", help="CSV file (default: standard output)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", parents=[common], help="Estimator benchmark sweep")
    p.add_argument("--sweep", default="noise", choices=sorted(SWEEP_REGISTRY))
    p.add_argument("--spec", help="Sweep spec JSON (overrides --sweep)")
    p.add_argument("--trials", type=int)
    p.add_argument("--outlier-mode", choices=["correspondences", "events"])
    p.add_argument("--estimator", action="append", help="Restrict to an estimator; repeatable")
    p.add_argument("--out", required=True, help="Report CSV")
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.print_config:
        config_path = getattr(args, "config", None) or args.global_config
        try:
            cfg = load_run_config(config_path)
        except PoseEstimationError as e:
            print(f"error: {e}", file=sys.stderr)
            return e.exit_code
        print(json.dumps(cfg.model_dump(mode="json"), indent=2))
        return 0

    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    _configure_logging(args)
    try:
        return args.handler(args)
    except PoseEstimationError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except ValueError as e:
        logger.error("%s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
