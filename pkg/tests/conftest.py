import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from lineloc.geometry import CameraIntrinsics, Pose, look_at
from lineloc.linemap import visible_lines
from lineloc.matching import match_lines
from lineloc.optimizer import SlidingWindow, WindowEntry, cap_correspondences, solve_pose
from lineloc.synth import (
    NoiseSpec,
    SceneSpec,
    corrupt_odometry,
    default_intrinsics,
    generate_scene,
    generate_trajectory,
    render_detections,
)
from lineloc.tracker import FrameInput


@pytest.fixture
def K100():
    return CameraIntrinsics(fx=100.0, fy=100.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def K():
    return default_intrinsics()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_pose(rng, max_angle=math.pi - 0.01, max_trans=2.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    R = Rotation.from_rotvec(axis * rng.uniform(0, max_angle)).as_matrix()
    return Pose(R, rng.uniform(-max_trans, max_trans, 3))


def perturb(pose: Pose, rot_rad: float, trans_m: float, rng) -> Pose:
    """Left-multiply ``pose`` by a rigid motion of the given angle and offset length."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    R = Rotation.from_rotvec(axis * rot_rad).as_matrix()
    return Pose(R @ pose.rotation, R @ pose.translation + trans_m * d)


def room_view(seed=0, density=60):
    """A box room and a ground-truth pose looking into it."""
    spec = SceneSpec("box-room", (10.0, 8.0, 3.0), density, seed)
    line_map = generate_scene(spec)
    pose = look_at([2.5, 2.0, 1.5], [5.0, 4.0, 1.4])
    return line_map, pose


def exact_window(line_map, pose, K, n_previous=0, m0=1000, noise=None, seed=0):
    """Window with one entry matched at the true pose from (optionally noisy) rendered detections."""
    dets = render_detections(line_map, pose, K, noise or NoiseSpec(), seed=seed)
    corrs = match_lines(visible_lines(line_map, pose, K), dets, pose, K, math.radians(10), 25.0)
    w = SlidingWindow(n_previous)
    w.push(WindowEntry(0, cap_correspondences(corrs, m0)))
    return w


def pose_error(a: Pose, b: Pose):
    """(rotation angle in rad, camera-center distance in m) between two poses."""
    dR = a.rotation.T @ b.rotation
    ang = math.acos(max(-1.0, min(1.0, (np.trace(dR) - 1) / 2)))
    return ang, float(np.linalg.norm(a.camera_center() - b.camera_center()))


def loop_frames(seed, noise, dims=(10.0, 8.0, 3.0), density=60, n_frames=100, path_length=None):
    """(map, gt, odometry, frames) for a seeded box-room loop."""
    K = default_intrinsics()
    spec = SceneSpec("box-room", dims, density, seed)
    line_map = generate_scene(spec)
    gt = generate_trajectory(spec, n_frames, "loop", seed, path_length=path_length)
    odom = corrupt_odometry(gt, noise, seed)
    frames = [
        FrameInput(k, gt.timestamps[k], odom.poses[k], render_detections(line_map, gt.poses[k], K, noise, seed, k))
        for k in range(n_frames)
    ]
    return line_map, gt, odom, frames


def single_frame_noise_floor(line_map, gt, frames, K, stride=10):
    """RMS camera-center error of one-frame solves started at the true pose."""
    errs = []
    for k in range(0, len(gt), stride):
        pose = gt.poses[k]
        corrs = match_lines(visible_lines(line_map, pose, K), frames[k].detections, pose, K, math.radians(10), 25.0)
        w = SlidingWindow(0)
        w.push(WindowEntry(k, cap_correspondences(corrs, 40)))
        errs.append(pose_error(solve_pose(pose, w, K).pose, pose)[1])
    return float(np.sqrt(np.mean(np.square(errs))))
