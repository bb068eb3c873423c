"""Synthetic ground truth: wireframe line maps, camera paths, drifting odometry, detections.

Every random draw comes from a stream derived from ``(seed, purpose, frame)``
so regenerating one frame never reshuffles another.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .geometry import CameraIntrinsics, Pose, compose, exp_map, invert, look_at, project_points
from .linemap import LineMap, format_line_map, visible_lines
from .matching import LineSegment2, format_detections
from .trajectory import Trajectory, format_trajectory, pose_to_row

SCENE_KINDS = ("box-room", "corridor", "building-facade")
PATTERNS = ("loop", "lawnmower")
CLUTTER_LENGTH = (20.0, 200.0)
MAX_AUTO_STEP = 0.45  # meters between consecutive frames of an automatically sized path

DEFAULT_DIMENSIONS = {
    "box-room": (10.0, 8.0, 3.0),
    "corridor": (30.0, 3.0, 3.0),
    "building-facade": (20.0, 15.0, 12.0),
}

# stream tags keep the purposes of random draws apart
_SCENE, _TRAJ, _ODOM, _DET = 1, 2, 3, 4


def _rng(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=(tag, index)))


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=420.0, fy=420.0, cx=320.0, cy=240.0, width=640, height=480)


@dataclass(frozen=True)
class SceneSpec:
    kind: str = "box-room"
    dimensions: tuple[float, float, float] | None = None
    density: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SCENE_KINDS:
            raise InvalidArgumentError(f"unknown scene kind {self.kind!r}")
        dims = self.dimensions if self.dimensions is not None else DEFAULT_DIMENSIONS[self.kind]
        dims = tuple(float(d) for d in dims)
        if len(dims) != 3 or min(dims) <= 0:
            raise InvalidArgumentError("dimensions must be three positive lengths")
        if self.density < 0:
            raise InvalidArgumentError("density must be non-negative")
        object.__setattr__(self, "dimensions", dims)


@dataclass(frozen=True)
class NoiseSpec:
    odom_rot_sigma: float = 0.0
    odom_trans_sigma: float = 0.0
    odom_drift_rate: float = 0.0
    det_endpoint_sigma: float = 0.0
    det_dropout_prob: float = 0.0
    clutter_per_frame: int = 0

    def __post_init__(self):
        vals = (self.odom_rot_sigma, self.odom_trans_sigma, self.odom_drift_rate,
                self.det_endpoint_sigma, self.clutter_per_frame)
        if min(vals) < 0:
            raise InvalidArgumentError("noise parameters must be non-negative")
        if not 0.0 <= self.det_dropout_prob <= 1.0:
            raise InvalidArgumentError("dropout probability outside [0, 1]")


def _box_edges(lo, hi):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[hi[i] if (k >> i) & 1 else lo[i] for i in range(3)] for k in range(8)])
    edges = []
    for a in range(8):
        for i in range(3):
            b = a | (1 << i)
            if b != a:
                edges.append((corners[a], corners[b]))
    return edges


def _box_faces(lo, hi):
    """Faces as (fixed axis, fixed value, free axes)."""
    faces = []
    for axis in range(3):
        free = tuple(a for a in range(3) if a != axis)
        faces.append((axis, lo[axis], free))
        faces.append((axis, hi[axis], free))
    return faces


def _face_segment(rng, lo, hi, face, min_len):
    axis, value, (a1, a2) = face
    span = np.array([hi[a1] - lo[a1], hi[a2] - lo[a2]])
    base = np.array([lo[a1], lo[a2]])
    margin = 0.05 * span
    for _ in range(100):
        style = rng.integers(3)
        p = base + margin + rng.random(2) * (span - 2 * margin)
        q = base + margin + rng.random(2) * (span - 2 * margin)
        if style == 0:
            q[1] = p[1]
        elif style == 1:
            q[0] = p[0]
        if np.linalg.norm(q - p) >= min_len:
            break
    s, e = np.empty(3), np.empty(3)
    s[axis] = e[axis] = value
    s[a1], s[a2] = p
    e[a1], e[a2] = q
    return s, e


def _face_weights(faces, lo, hi):
    areas = np.array([(hi[a1] - lo[a1]) * (hi[a2] - lo[a2]) for _, _, (a1, a2) in faces])
    return areas / areas.sum()


def generate_scene(spec: SceneSpec) -> LineMap:
    """Axis-aligned wireframe plus ``density`` seeded lines on the scene surfaces."""
    W, D, H = spec.dimensions
    rng = _rng(spec.seed, _SCENE)
    lo, hi = np.zeros(3), np.array([W, D, H])
    segs = _box_edges(lo, hi)
    if spec.kind in ("box-room", "corridor"):
        faces = _box_faces(lo, hi)
        weights = _face_weights(faces, lo, hi)
        min_len = 0.15 * min(W, D, H)
        for _ in range(spec.density):
            face = faces[rng.choice(len(faces), p=weights)]
            segs.append(_face_segment(rng, lo, hi, face, min_len))
    else:
        # window frames on the four vertical facades
        faces = [f for f in _box_faces(lo, hi) if f[0] != 2]
        weights = _face_weights(faces, lo, hi)
        extra = []
        while len(extra) < spec.density:
            axis, value, (a1, a2) = faces[rng.choice(len(faces), p=weights)]
            w = rng.uniform(0.06, 0.15) * hi[a1]
            h = rng.uniform(0.06, 0.15) * hi[a2]
            x0 = rng.uniform(0.05 * hi[a1], 0.95 * hi[a1] - w)
            y0 = rng.uniform(0.05 * hi[a2], 0.95 * hi[a2] - h)
            rect = [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]
            for k in range(4):
                s, e = np.empty(3), np.empty(3)
                s[axis] = e[axis] = value
                s[a1], s[a2] = rect[k]
                e[a1], e[a2] = rect[(k + 1) % 4]
                extra.append((s, e))
        segs.extend(extra[: spec.density])
    return LineMap.from_segments(segs)


def _ellipse_perimeter(a, b):
    return math.pi * (3 * (a + b) - math.sqrt((3 * a + b) * (a + 3 * b)))


def generate_trajectory(
    spec: SceneSpec,
    n_frames: int,
    pattern: str = "loop",
    seed: int = 0,
    path_length: float | None = None,
    dt: float = 0.1,
) -> Trajectory:
    """Smooth ground-truth camera path for a scene.

    ``loop`` circles an ellipse while looking at the scene center and ends
    exactly where it started; ``lawnmower`` sweeps rows while facing one wall.
    ``path_length`` rescales the loop ellipse to a given perimeter. Without
    it, paths are shrunk about their center so consecutive frames stay under
    ``MAX_AUTO_STEP`` apart; the facade loop cannot shrink into the building
    and needs enough frames on its own.
    """
    if n_frames < 2:
        raise InvalidArgumentError("need at least two frames")
    if pattern not in PATTERNS:
        raise InvalidArgumentError(f"unknown pattern {pattern!r}")
    W, D, H = spec.dimensions
    rng = _rng(seed, _TRAJ)
    center = np.array([W / 2, D / 2, H / 2])
    outside = spec.kind == "building-facade"
    stamps = [k * dt for k in range(n_frames)]

    if pattern == "loop":
        if outside:
            a, b = 0.5 * W + 0.6 * max(W, D), 0.5 * D + 0.6 * max(W, D)
        else:
            a, b = 0.35 * W, 0.35 * D
        if path_length is not None:
            scale = path_length / _ellipse_perimeter(a, b)
            a, b = a * scale, b * scale
        elif not outside:
            # fastest point of the ellipse moves 2*pi*max(a, b) per revolution
            scale = min(1.0, MAX_AUTO_STEP * (n_frames - 1) / (2 * math.pi * max(a, b)))
            a, b = a * scale, b * scale
        s0 = rng.uniform(0, 2 * math.pi)
        phase = rng.uniform(0, 2 * math.pi, size=2)
        z_amp = 0.08 * H
        z_eye = 0.35 * H if outside else 0.5 * H
        poses = []
        for k in range(n_frames):
            s = s0 + 2 * math.pi * k / (n_frames - 1)
            eye = np.array([
                center[0] + a * math.cos(s),
                center[1] + b * math.sin(s),
                z_eye + z_amp * math.sin(2 * s + phase[0]),
            ])
            # aim at the center, but along a direction whose ellipse is at most 2:1 so
            # the view turns no faster than twice the angular step on elongated loops
            target = eye + np.array([
                -min(a, 2 * b) * math.cos(s),
                -min(b, 2 * a) * math.sin(s),
                center[2] + 0.1 * H * math.sin(s + phase[1]) - eye[2],
            ])
            poses.append(look_at(eye, target))
        return Trajectory(stamps, poses)

    # lawnmower: rows along x, facing +y
    rows = 4
    if outside:
        ys = np.linspace(-0.9 * max(W, D), -0.5 * max(W, D), rows)
        z_eye = 0.35 * H
    else:
        ys = np.linspace(0.15 * D, 0.45 * D, rows)
        z_eye = 0.5 * H
    x0, x1 = 0.15 * W, 0.85 * W
    corners = []
    for i, y in enumerate(ys):
        xs = (x0, x1) if i % 2 == 0 else (x1, x0)
        corners += [(xs[0], y), (xs[1], y)]
    corners = np.array(corners)
    total = np.linalg.norm(np.diff(corners, axis=0), axis=1).sum()
    shrink = min(1.0, MAX_AUTO_STEP * (n_frames - 1) / total)
    mid = corners.mean(axis=0)
    corners = mid + shrink * (corners - mid)
    seglen = np.linalg.norm(np.diff(corners, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seglen)])
    s = np.linspace(0.0, cum[-1], n_frames)
    xy = np.stack([np.interp(s, cum, corners[:, 0]), np.interp(s, cum, corners[:, 1])], axis=1)
    yaw_amp = math.radians(rng.uniform(5.0, 15.0))
    phase = rng.uniform(0, 2 * math.pi)
    poses = []
    for k in range(n_frames):
        eye = np.array([xy[k, 0], xy[k, 1], z_eye])
        yaw = yaw_amp * math.sin(2 * math.pi * s[k] / max(cum[-1], 1e-9) * 2 + phase)
        direction = np.array([math.sin(yaw), math.cos(yaw), -0.05])
        poses.append(look_at(eye, eye + direction))
    return Trajectory(stamps, poses)


def _translation(v) -> Pose:
    return Pose(np.eye(3), v)


def corrupt_odometry(gt: Trajectory, noise: NoiseSpec, seed: int = 0) -> Trajectory:
    """Drifting odometry: per-step body-frame noise plus a world-frame bias per meter.

    The bias points along a seeded horizontal direction with magnitude
    ``odom_drift_rate`` times the step length. The first pose is returned
    unchanged, and a zero ``noise`` reproduces ``gt`` exactly.
    """
    if len(gt) == 0:
        return Trajectory()
    drift_rng = _rng(seed, _ODOM, 0)
    heading = drift_rng.uniform(0, 2 * math.pi)
    drift_dir = np.array([math.cos(heading), math.sin(heading), 0.0])

    poses = [gt.poses[0]]
    centers = gt.positions()
    # odometry pose k is gt pose k followed by an accumulated world-frame error
    err = Pose.identity()
    err_is_identity = True
    for k in range(1, len(gt)):
        rng = _rng(seed, _ODOM, k)
        rot = rng.normal(0.0, 1.0, 3) * noise.odom_rot_sigma
        trans = rng.normal(0.0, 1.0, 3) * noise.odom_trans_sigma
        P = gt.poses[k]
        if np.any(rot) or np.any(trans):
            # body-frame perturbation E applied after the true motion, moved to the world side
            E_inv = invert(exp_map(np.concatenate([rot, trans])))
            err = compose(compose(invert(P), compose(E_inv, P)), err)
            err_is_identity = False
        bias = noise.odom_drift_rate * float(np.linalg.norm(centers[k] - centers[k - 1])) * drift_dir
        if np.any(bias):
            err = compose(err, _translation(-bias))
            err_is_identity = False
        poses.append(P if err_is_identity else compose(P, err))
    return Trajectory(list(gt.timestamps), poses)


def render_detections(
    line_map: LineMap,
    gt_pose: Pose,
    K: CameraIntrinsics,
    noise: NoiseSpec,
    seed: int = 0,
    frame_index: int = 0,
    min_length: float = 2.0,
) -> list[LineSegment2]:
    """Noisy 2D detections of the lines visible from ``gt_pose`` plus uniform clutter."""
    rng = _rng(seed, _DET, frame_index)
    vis = visible_lines(line_map, gt_pose, K)
    uv, _ = project_points(np.stack([vis.starts, vis.ends], axis=1), gt_pose, K)
    n = len(vis)
    jitter = rng.normal(0.0, 1.0, size=(n, 2, 2))
    keep = rng.random(n) >= noise.det_dropout_prob
    if noise.det_endpoint_sigma > 0:
        uv = uv + noise.det_endpoint_sigma * jitter
    out = []
    for i in np.flatnonzero(keep):
        (u1, v1), (u2, v2) = uv[i]
        if math.hypot(u2 - u1, v2 - v1) < max(min_length, 1e-9):
            continue
        out.append(LineSegment2((u1, v1), (u2, v2), frame_index))
    for _ in range(noise.clutter_per_frame):
        for _attempt in range(100):
            p = rng.random(2) * [K.width, K.height]
            ang = rng.uniform(0, math.pi)
            length = rng.uniform(*CLUTTER_LENGTH)
            q = p + length * np.array([math.cos(ang), math.sin(ang)])
            if 0 <= q[0] < K.width and 0 <= q[1] < K.height:
                break
        else:
            q = np.clip(q, 0, [K.width - 1e-6, K.height - 1e-6])
        out.append(LineSegment2(tuple(p), tuple(q), frame_index))
    return out


def write_dataset(
    out_dir,
    scene: SceneSpec,
    noise: NoiseSpec,
    n_frames: int,
    pattern: str = "loop",
    seed: int = 0,
    K: CameraIntrinsics | None = None,
    path_length: float | None = None,
    executor=None,
) -> dict:
    """Generate a scene, trajectories and detections and write them under ``out_dir``.

    Returns the manifest (also written as ``manifest.json``). ``executor`` may
    be a ``concurrent.futures`` executor used to render frames in parallel.
    """
    K = K or default_intrinsics()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    line_map = generate_scene(scene)
    gt = generate_trajectory(scene, n_frames, pattern, seed, path_length=path_length)
    odom = corrupt_odometry(gt, noise, seed)

    def render(k):
        return render_detections(line_map, gt.poses[k], K, noise, seed, k)

    mapper = executor.map if executor is not None else map
    frames = dict(zip(range(n_frames), mapper(render, range(n_frames))))

    files = {
        "map": "map.txt",
        "ground_truth": "groundtruth.txt",
        "odometry": "odometry.txt",
        "detections": "detections.txt",
        "intrinsics": "intrinsics.json",
    }
    (out / files["map"]).write_text(format_line_map(line_map), encoding="utf-8")
    (out / files["ground_truth"]).write_text(format_trajectory(gt), encoding="utf-8")
    (out / files["odometry"]).write_text(format_trajectory(odom), encoding="utf-8")
    (out / files["detections"]).write_text(format_detections(frames), encoding="utf-8")
    (out / files["intrinsics"]).write_text(json.dumps(K.to_dict(), indent=2) + "\n", encoding="utf-8")
    manifest = {
        "files": files,
        "scene": {"kind": scene.kind, "dimensions": list(scene.dimensions), "density": scene.density, "seed": scene.seed},
        "noise": {k: getattr(noise, k) for k in NoiseSpec.__dataclass_fields__},
        "n_frames": n_frames,
        "pattern": pattern,
        "seed": seed,
        "segments": len(line_map),
        "initial_pose": " ".join(repr(v) for v in pose_to_row(gt.poses[0])),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest
