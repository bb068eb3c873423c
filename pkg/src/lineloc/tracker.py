"""Per-keyframe localization pipeline: predict, match, optimize, refine."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InputOrderError, InvalidArgumentError
from .geometry import CameraIntrinsics, Pose, compose, invert
from .linemap import LineMap, visible_lines
from .matching import LineSegment2, match_lines
from .optimizer import (
    SlidingWindow,
    SolverConfig,
    WindowEntry,
    advance_window,
    cap_correspondences,
    solve_pose,
)
from .trajectory import Trajectory

log = logging.getLogger(__name__)

DEGENERACY_RATIO = 1e-8


@dataclass(frozen=True)
class TrackerConfig:
    theta0: float = math.radians(10.0)
    d0: float = 25.0
    min_correspondences: int = 8
    m0: int = 40
    window_n: int = 10
    refine_iterations: int = 3
    tighten_factor: float = 0.8

    def __post_init__(self):
        if not 0 < self.tighten_factor < 1:
            raise InvalidArgumentError("tighten_factor must lie in (0, 1)")
        if self.theta0 <= 0 or self.d0 <= 0:
            raise InvalidArgumentError("thresholds must be positive")
        if self.min_correspondences < 1 or self.m0 < 1 or self.refine_iterations < 1 or self.window_n < 0:
            raise InvalidArgumentError("counts must be positive")


@dataclass
class FrameInput:
    frame_id: int
    timestamp: float
    odometry_pose: Pose
    detections: list[LineSegment2] = field(default_factory=list)


@dataclass
class FrameResult:
    frame_id: int
    timestamp: float
    pose: Pose
    predicted_pose: Pose
    correspondence_count: int
    mode: str  # "optimized" or "fallback"
    cost_trace: list[tuple[float, float]] = field(default_factory=list)
    lm_iterations: int = 0
    cond_ratio: float = float("nan")
    thresholds: list[tuple[float, float]] = field(default_factory=list)
    matched: list[list] = field(default_factory=list)

    @property
    def initial_cost(self) -> float:
        return self.cost_trace[0][0] if self.cost_trace else float("nan")

    @property
    def final_cost(self) -> float:
        return self.cost_trace[-1][1] if self.cost_trace else float("nan")

    @property
    def degenerate(self) -> bool:
        return self.cond_ratio < DEGENERACY_RATIO


def predict_pose(prev_estimate: Pose, prev_odom: Pose, cur_odom: Pose) -> Pose:
    """Carry the previous estimate forward by the odometry's inter-frame motion."""
    motion = compose(cur_odom, invert(prev_odom))
    return compose(motion, prev_estimate)


class Tracker:
    """Single-owner tracker state: last estimate, last odometry pose, sliding window."""

    def __init__(
        self,
        line_map: LineMap,
        K: CameraIntrinsics,
        initial_pose: Pose,
        cfg: TrackerConfig | None = None,
        solver_cfg: SolverConfig | None = None,
        keep_matches: bool = False,
    ):
        self.line_map = line_map
        self.K = K
        self.cfg = cfg or TrackerConfig()
        self.solver_cfg = solver_cfg or SolverConfig()
        self.initial_pose = initial_pose
        self.keep_matches = keep_matches
        self.window = SlidingWindow(self.cfg.window_n)
        self.prev_estimate: Pose | None = None
        self.prev_odom: Pose | None = None
        self.last_frame_id: int | None = None
        self.last_timestamp: float | None = None

    def process_frame(self, frame: FrameInput) -> FrameResult:
        if self.last_frame_id is not None:
            if frame.frame_id <= self.last_frame_id:
                raise InputOrderError(f"frame id {frame.frame_id} does not follow {self.last_frame_id}")
            if frame.timestamp <= self.last_timestamp:
                raise InputOrderError(f"timestamp {frame.timestamp} does not follow {self.last_timestamp}")

        cfg = self.cfg
        empty = WindowEntry(frame.frame_id)
        if self.prev_estimate is None:
            predicted = self.initial_pose
            self.window.push(empty)
        else:
            motion = compose(frame.odometry_pose, invert(self.prev_odom))
            predicted = compose(motion, self.prev_estimate)
            self.window = advance_window(self.window, motion, empty)

        theta, dist = cfg.theta0, cfg.d0
        pose = predicted
        result = FrameResult(frame.frame_id, frame.timestamp, predicted, predicted, 0, "fallback")
        solved = False
        for _ in range(cfg.refine_iterations):
            vis = visible_lines(self.line_map, pose, self.K)
            corrs = cap_correspondences(match_lines(vis, frame.detections, pose, self.K, theta, dist), cfg.m0)
            if len(corrs) < cfg.min_correspondences:
                if not solved:
                    result.correspondence_count = len(corrs)
                break
            self.window.replace_current(corrs)
            report = solve_pose(pose, self.window, self.K, self.solver_cfg)
            pose = report.pose
            solved = True
            result.correspondence_count = len(corrs)
            result.cost_trace.append((report.initial_cost, report.final_cost))
            result.lm_iterations += report.iterations
            result.cond_ratio = report.cond_ratio
            result.thresholds.append((theta, dist))
            if self.keep_matches:
                result.matched.append(corrs)
            theta *= cfg.tighten_factor
            dist *= cfg.tighten_factor

        if solved:
            result.mode = "optimized"
            result.pose = pose
            if result.degenerate:
                log.warning("frame %d: normal matrix near singular (ratio %.3g)", frame.frame_id, result.cond_ratio)
        else:
            # window keeps the empty current entry pushed above
            result.pose = predicted

        self.prev_estimate = result.pose
        self.prev_odom = frame.odometry_pose
        self.last_frame_id = frame.frame_id
        self.last_timestamp = frame.timestamp
        return result


def run_sequence(
    inputs,
    line_map: LineMap,
    K: CameraIntrinsics,
    cfg: TrackerConfig | None,
    initial_pose: Pose,
    solver_cfg: SolverConfig | None = None,
) -> tuple[Trajectory, list[FrameResult]]:
    tracker = Tracker(line_map, K, initial_pose, cfg, solver_cfg)
    results = [tracker.process_frame(f) for f in inputs]
    if not results:
        raise InvalidArgumentError("empty frame stream")
    traj = Trajectory([r.timestamp for r in results], [r.pose for r in results])
    return traj, results


def frames_from_data(odometry: Trajectory, detections: dict[int, list[LineSegment2]]) -> list[FrameInput]:
    """Pair the k-th odometry pose with the detections tagged frame ``k``."""
    return [
        FrameInput(k, ts, pose, list(detections.get(k, ())))
        for k, (ts, pose) in enumerate(odometry)
    ]


DIAGNOSTIC_FIELDS = (
    "frame_id", "mode", "correspondence_count", "initial_cost", "final_cost", "lm_iterations", "cond_ratio",
)


def format_diagnostics(results) -> str:
    lines = [",".join(DIAGNOSTIC_FIELDS)]
    for r in results:
        lines.append(",".join([
            str(r.frame_id), r.mode, str(r.correspondence_count),
            repr(float(r.initial_cost)), repr(float(r.final_cost)), str(r.lm_iterations),
            repr(float(r.cond_ratio)),
        ]))
    return "\n".join(lines) + "\n"


def position_errors(traj: Trajectory, truth: Trajectory) -> np.ndarray:
    return np.linalg.norm(traj.positions() - truth.positions(), axis=1)
