"""Command-line entry point: ``lineloc synth | track | eval``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .errors import LineLocError
from .geometry import CameraIntrinsics
from .linemap import load_line_map
from .matching import load_detections
from .synth import PATTERNS, SCENE_KINDS, NoiseSpec, SceneSpec, write_dataset
from .tracker import TrackerConfig, format_diagnostics, frames_from_data, run_sequence
from .trajectory import load_trajectory, parse_pose_string, save_trajectory

log = logging.getLogger("lineloc")

_DEFAULTS = TrackerConfig()


class UsageError(Exception):
    pass


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="random seed (default: %(default)s)")
    p.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker threads; outputs do not depend on this (default: %(default)s)")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_tracker_flags(p):
    g = p.add_argument_group("tracker")
    g.add_argument("--theta0-deg", type=float, default=math.degrees(_DEFAULTS.theta0),
                   help="angle threshold in degrees (default: %(default)s)")
    g.add_argument("--d0-px", type=float, default=_DEFAULTS.d0,
                   help="endpoint distance threshold in pixels (default: %(default)s)")
    g.add_argument("--min-corr", type=_positive_int, default=_DEFAULTS.min_correspondences,
                   help="minimum correspondences before falling back to odometry (default: %(default)s)")
    g.add_argument("--m0", type=_positive_int, default=_DEFAULTS.m0,
                   help="maximum correspondences kept per frame (default: %(default)s)")
    g.add_argument("--window", type=int, default=_DEFAULTS.window_n,
                   help="number of previous keyframes in the sliding window (default: %(default)s)")
    g.add_argument("--refine-iters", type=_positive_int, default=_DEFAULTS.refine_iterations,
                   help="match/optimize rounds per frame (default: %(default)s)")
    g.add_argument("--tighten", type=float, default=_DEFAULTS.tighten_factor,
                   help="threshold shrink factor per round (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lineloc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--kind", choices=SCENE_KINDS, default="box-room")
    p.add_argument("--dims", type=float, nargs=3, metavar=("X", "Y", "Z"), default=None,
                   help="scene dimensions in meters (kind-specific default)")
    p.add_argument("--density", type=int, default=60, help="extra lines beyond the box edges")
    p.add_argument("--frames", type=int, default=100, help="number of keyframes")
    p.add_argument("--pattern", choices=PATTERNS, default="loop")
    p.add_argument("--path-length", type=float, default=None, help="rescale the loop to this length (m)")
    p.add_argument("--odom-rot-sigma", type=float, default=0.001, help="rad per step")
    p.add_argument("--odom-trans-sigma", type=float, default=0.002, help="m per step")
    p.add_argument("--drift-rate", type=float, default=0.005, help="odometry bias, fraction of distance")
    p.add_argument("--det-sigma", type=float, default=1.0, help="detection endpoint noise (px)")
    p.add_argument("--dropout", type=float, default=0.1, help="detection dropout probability")
    p.add_argument("--clutter", type=int, default=5, help="clutter segments per frame")
    _add_common(p)

    p = sub.add_parser("track", help="track a sequence in a line map")
    p.add_argument("--map", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--odometry", required=True)
    p.add_argument("--intrinsics", required=True, help="JSON with fx, fy, cx, cy, width, height")
    p.add_argument("--init-pose", default=None, help='"tx ty tz qx qy qz qw" (camera in world)')
    p.add_argument("--out", required=True, help="output directory")
    _add_tracker_flags(p)
    _add_common(p)

    p = sub.add_parser("eval", help="evaluate trajectories against ground truth")
    p.add_argument("--est", action="append", required=True,
                   help="estimated trajectory, optionally LABEL=PATH; repeatable")
    p.add_argument("--gt", required=True)
    p.add_argument("--align-n", type=_positive_int, default=200, help="poses used for alignment (default: %(default)s)")
    p.add_argument("--lengths", type=float, nargs="+", default=list(ev.DEFAULT_RPE_LENGTHS),
                   help="RPE segment lengths in meters (default: %(default)s)")
    p.add_argument("--max-dt", type=float, default=0.02, help="association tolerance in seconds (default: %(default)s)")
    p.add_argument("--scale", action="store_true", help="also estimate scale during alignment")
    p.add_argument("--out", required=True, help="output directory")
    _add_common(p)
    return parser


def load_intrinsics(path) -> CameraIntrinsics:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LineLocError(f"{path}:{exc.lineno}: {exc.msg}") from None
    try:
        return CameraIntrinsics(**{k: data[k] for k in ("fx", "fy", "cx", "cy", "width", "height")})
    except KeyError as exc:
        raise LineLocError(f"{path}: missing intrinsics field {exc}") from None


def cmd_synth(args) -> int:
    if args.frames < 2:
        raise UsageError(f"--frames must be at least 2, got {args.frames}")
    scene = SceneSpec(args.kind, tuple(args.dims) if args.dims else None, args.density, args.seed)
    noise = NoiseSpec(
        odom_rot_sigma=args.odom_rot_sigma,
        odom_trans_sigma=args.odom_trans_sigma,
        odom_drift_rate=args.drift_rate,
        det_endpoint_sigma=args.det_sigma,
        det_dropout_prob=args.dropout,
        clutter_per_frame=args.clutter,
    )
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        manifest = write_dataset(args.out, scene, noise, args.frames, args.pattern, args.seed,
                                 path_length=args.path_length, executor=pool if args.threads > 1 else None)
    print(json.dumps(manifest, indent=2))
    return 0


def cmd_track(args) -> int:
    if args.init_pose is None:
        raise UsageError("--init-pose is required")
    try:
        initial = parse_pose_string(args.init_pose)
    except LineLocError as exc:
        raise UsageError(str(exc)) from None
    cfg = TrackerConfig(
        theta0=math.radians(args.theta0_deg),
        d0=args.d0_px,
        min_correspondences=args.min_corr,
        m0=args.m0,
        window_n=args.window,
        refine_iterations=args.refine_iters,
        tighten_factor=args.tighten,
    )
    line_map = load_line_map(args.map)
    detections = load_detections(args.detections)
    odometry = load_trajectory(args.odometry)
    K = load_intrinsics(args.intrinsics)
    frames = frames_from_data(odometry, detections)

    t0 = time.perf_counter()
    traj, results = run_sequence(frames, line_map, K, cfg, initial)
    elapsed = time.perf_counter() - t0

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_trajectory(traj, out / "trajectory.txt")
    (out / "diagnostics.csv").write_text(format_diagnostics(results), encoding="utf-8")

    n = len(results)
    fallbacks = sum(r.mode == "fallback" for r in results)
    degenerate = sum(r.mode == "optimized" and r.degenerate for r in results)
    mean_corr = float(np.mean([r.correspondence_count for r in results]))
    print(f"frames: {n}")
    print(f"fallback frames: {fallbacks}")
    print(f"degenerate frames: {degenerate}")
    print(f"mean correspondences: {mean_corr:.2f}")
    print(f"time per frame: {1000.0 * elapsed / n:.2f} ms")
    return 0


def _split_label(spec: str, k: int):
    if "=" in spec:
        label, path = spec.split("=", 1)
        return label, path
    return Path(spec).stem or f"run{k}", spec


def _evaluate_run(est_path, gt, args):
    est = load_trajectory(est_path)
    pairs = ev.associate(est, gt, args.max_dt)
    n_align = args.align_n
    if n_align > len(pairs):
        log.warning("%s: --align-n %d exceeds %d paired poses; using all", est_path, n_align, len(pairs))
        n_align = len(pairs)
    alignment = ev.align(est, gt, n_align, pairs=pairs, with_scale=args.scale)
    ate = ev.ate_rmse(est, gt, alignment, pairs=pairs)
    gt_sub = type(gt)([gt.timestamps[j] for _, j in pairs], [gt.poses[j] for _, j in pairs])
    est_sub = type(est)([est.timestamps[i] for i, _ in pairs], [est.poses[i] for i, _ in pairs])
    errs = ev.rpe_errors(est_sub, gt_sub, args.lengths)
    gap = ev.loop_gap(est)
    return ate, errs, gap, len(pairs)


def cmd_eval(args) -> int:
    gt = load_trajectory(args.gt)
    runs = [_split_label(s, k) for k, s in enumerate(args.est)]
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        outcomes = list(pool.map(lambda lp: _evaluate_run(lp[1], gt, args), runs))

    rows = []
    series = {}
    for (label, _), (ate, errs, gap, n_pairs) in zip(runs, outcomes):
        rows.append((f"{label}.pairs", n_pairs, "count"))
        rows.append((f"{label}.ate_rmse", ate, "m"))
        for L, e in errs.items():
            rmse = None if e is None else float(np.sqrt(np.mean(e * e)))
            rows.append((f"{label}.rpe_rmse_{L:g}m", rmse, "m"))
        rows.append((f"{label}.loop_gap", gap, "m"))
        series[label] = errs
    if len(runs) > 1:
        rows.append(("mean.ate_rmse", float(np.mean([o[0] for o in outcomes])), "m"))
        rows.append(("mean.loop_gap", float(np.mean([o[2] for o in outcomes])), "m"))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = ev.metrics_csv(rows)
    (out / "metrics.csv").write_text(text, encoding="utf-8")
    (out / "rpe.svg").write_text(ev.rpe_boxplot_svg(series), encoding="utf-8")
    sys.stdout.write(text)
    return 0


COMMANDS = {"synth": cmd_synth, "track": cmd_track, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lineloc {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (LineLocError, OSError) as exc:
        print(f"lineloc {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
