"""Timestamped pose sequences and the plain-text trajectory format.

File rows are ``timestamp tx ty tz qx qy qz qw`` and describe the camera in
the world (camera-to-world, quaternion w-last). In memory every pose is
world-to-camera, so rows are inverted on read and write.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InputOrderError, InvalidArgumentError, ParseError
from .geometry import Pose, invert


@dataclass
class Trajectory:
    timestamps: list[float] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)

    def __post_init__(self):
        if len(self.timestamps) != len(self.poses):
            raise InvalidArgumentError("timestamps and poses differ in length")
        ts = np.asarray(self.timestamps, dtype=float)
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise InputOrderError("trajectory timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    def positions(self) -> np.ndarray:
        """Camera centers in world coordinates, shape (n, 3)."""
        if not self.poses:
            return np.zeros((0, 3))
        return np.array([p.camera_center() for p in self.poses])

    def sorted(self) -> Trajectory:
        order = np.argsort(self.timestamps, kind="stable")
        return Trajectory([self.timestamps[i] for i in order], [self.poses[i] for i in order])


def pose_to_row(pose: Pose) -> list[float]:
    """``[tx, ty, tz, qx, qy, qz, qw]`` of the camera-to-world transform."""
    c = invert(pose)
    q = Rotation.from_matrix(c.rotation).as_quat()
    if q[3] < 0:
        q = -q
    return [*c.translation.tolist(), *q.tolist()]


def pose_from_row(values) -> Pose:
    values = np.asarray(values, dtype=float)
    if values.shape != (7,) or not np.all(np.isfinite(values)):
        raise InvalidArgumentError("pose row needs 7 finite values: tx ty tz qx qy qz qw")
    if np.linalg.norm(values[3:]) < 1e-12:
        raise InvalidArgumentError("zero quaternion")
    R = Rotation.from_quat(values[3:]).as_matrix()
    return invert(Pose(R, values[:3]))


def parse_pose_string(text: str) -> Pose:
    parts = text.replace(",", " ").split()
    try:
        return pose_from_row([float(p) for p in parts])
    except ValueError as exc:
        raise InvalidArgumentError(f"bad pose {text!r}: {exc}") from None


def load_trajectory(path) -> Trajectory:
    """Read a trajectory file; rows are sorted by timestamp."""
    path = Path(path)
    stamps, poses = [], []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.replace(",", " ").split()
            if len(fields) != 8:
                raise ParseError(path, line_no, f"expected 8 fields, got {len(fields)}")
            try:
                values = [float(f) for f in fields]
                pose = pose_from_row(values[1:])
            except (ValueError, InvalidArgumentError) as exc:
                raise ParseError(path, line_no, str(exc)) from None
            stamps.append(values[0])
            poses.append(pose)
    order = np.argsort(stamps, kind="stable")
    stamps = [stamps[i] for i in order]
    if len(stamps) > 1 and np.any(np.diff(stamps) <= 0):
        raise ParseError(path, 0, "duplicate timestamps")
    return Trajectory(stamps, [poses[i] for i in order])


def format_trajectory(traj: Trajectory) -> str:
    rows = []
    for ts, pose in traj:
        rows.append(" ".join(repr(float(v)) for v in [ts, *pose_to_row(pose)]))
    return "".join(r + "\n" for r in rows)


def save_trajectory(traj: Trajectory, path) -> None:
    Path(path).write_text(format_trajectory(traj), encoding="utf-8")
