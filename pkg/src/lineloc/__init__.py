"""Monocular camera tracking in prior 3D line maps using 2D-3D line correspondences."""

from .geometry import (
    CameraIntrinsics,
    PixelPoint,
    Pose,
    compose,
    exp_map,
    in_fov,
    invert,
    log_map,
    project_point,
)
from .linemap import LineMap, LineSegment3, VisibleLine, VisibleSet, load_line_map, visible_lines
from .matching import (
    Correspondence,
    InfiniteLineCoeffs,
    LineDistance,
    LineSegment2,
    angle_distance,
    endpoint_line_distance,
    line_coeffs,
    load_detections,
    match_lines,
    overlap_length,
)
from .optimizer import (
    SlidingWindow,
    SolveReport,
    SolverConfig,
    WindowEntry,
    advance_window,
    cap_correspondences,
    residuals,
    solve_pose,
)
from .tracker import FrameInput, FrameResult, Tracker, TrackerConfig, predict_pose, run_sequence
from .trajectory import Trajectory, load_trajectory, save_trajectory

__version__ = "0.1.0"
