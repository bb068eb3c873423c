"""Rigid transforms, twists and the pinhole camera.

Poses are world-to-camera: a world point X maps to camera coordinates
``R @ X + t``. Twists are 6-vectors ``(rx, ry, rz, tx, ty, tz)`` with the
rotation part first (axis-angle, radians) and the translation part in meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import AtCameraPlaneError, InvalidArgumentError, NearSingularError

SMALL_ANGLE = 1e-8
LOG_ANGLE_LIMIT = math.pi - 1e-6
MIN_DEPTH = 1e-12


def skew(v):
    """Cross-product matrix: ``skew(a) @ b == np.cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m):
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> Pose:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T, renormalize: bool = False) -> Pose:
        T = np.asarray(T, dtype=float)
        R = T[:3, :3]
        if renormalize:
            R = orthonormalize(R)
        return cls(R, T[:3, 3])

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def apply(self, points):
        """Transform points of shape (..., 3)."""
        pts = np.asarray(points, dtype=float)
        # one flat product; stacked (..., 3) operands fall off the BLAS path
        return (pts.reshape(-1, 3) @ self.rotation.T + self.translation).reshape(pts.shape)

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates."""
        return -self.rotation.T @ self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.all(np.isfinite(self.translation))
            and np.abs(R.T @ R - np.eye(3)).max() < tol
            and abs(np.linalg.det(R) - 1.0) < tol
        )

    def allclose(self, other: Pose, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol)
            and np.allclose(self.translation, other.translation, rtol=0.0, atol=atol)
        )

    def __repr__(self):
        return f"Pose(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def orthonormalize(R):
    """Nearest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


def compose(a: Pose, b: Pose) -> Pose:
    """``a ∘ b``: apply ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(a: Pose) -> Pose:
    Rt = a.rotation.T
    return Pose(Rt, -(Rt @ a.translation))


def _so3_exp(r):
    theta2 = float(r @ r)
    theta = math.sqrt(theta2)
    W = skew(r)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        R = np.eye(3) + W + 0.5 * W2
        V = np.eye(3) + 0.5 * W + W2 / 6.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        A = s / theta
        B = (1.0 - c) / theta2
        C = (theta - s) / (theta2 * theta)
        R = np.eye(3) + A * W + B * W2
        V = np.eye(3) + B * W + C * W2
    return R, V


def exp_map(xi) -> Pose:
    """Exponential map se(3) -> SE(3)."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    if not np.all(np.isfinite(xi)):
        raise InvalidArgumentError(f"non-finite twist {xi}")
    R, V = _so3_exp(xi[:3])
    return Pose(R, V @ xi[3:])


def so3_log(R) -> np.ndarray:
    """Axis-angle vector of a rotation matrix with angle below pi - 1e-6."""
    R = np.asarray(R, dtype=float)
    cos_theta = min(1.0, max(-1.0, 0.5 * (np.trace(R) - 1.0)))
    w = 0.5 * vee(R - R.T)
    sin_theta = float(np.linalg.norm(w))
    theta = math.atan2(sin_theta, cos_theta)
    if theta >= LOG_ANGLE_LIMIT:
        raise NearSingularError(f"rotation angle {theta:.9f} too close to pi")
    if theta < SMALL_ANGLE:
        return w
    if theta < math.pi - 1e-3:
        return w * (theta / sin_theta)
    # near pi the antisymmetric part vanishes; read the axis off the symmetric part
    S = 0.5 * (R + R.T) - cos_theta * np.eye(3)
    k = int(np.argmax(np.diag(S)))
    axis = S[:, k] / np.linalg.norm(S[:, k])
    if axis @ w < 0.0:
        axis = -axis
    return axis * theta


def log_map(p: Pose) -> np.ndarray:
    """Logarithm SE(3) -> se(3); inverse of :func:`exp_map`."""
    r = so3_log(p.rotation)
    theta2 = float(r @ r)
    theta = math.sqrt(theta2)
    W = skew(r)
    W2 = W @ W
    if theta < SMALL_ANGLE:
        V_inv = np.eye(3) - 0.5 * W + W2 / 12.0
    else:
        s, c = math.sin(theta), math.cos(theta)
        V_inv = np.eye(3) - 0.5 * W + (1.0 - theta * s / (2.0 * (1.0 - c))) / theta2 * W2
    return np.concatenate([r, V_inv @ p.translation])


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height:
            raise InvalidArgumentError("image size must be integral")
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgumentError("image size must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise InvalidArgumentError("principal point outside the image")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }


class PixelPoint(NamedTuple):
    u: float
    v: float


def project_point(P, pose: Pose, K: CameraIntrinsics) -> tuple[PixelPoint, float]:
    """Project a world point; returns the dehomogenized pixel and the depth ``w``.

    No field-of-view test is applied here; points behind the camera come back
    with negative ``w``.
    """
    x, y, w = K.matrix @ pose.apply(np.asarray(P, dtype=float).reshape(3))
    if abs(w) < MIN_DEPTH:
        raise AtCameraPlaneError(f"point {P} lies on the camera plane")
    return PixelPoint(float(x / w), float(y / w)), float(w)


def in_fov(px, w: float, K: CameraIntrinsics) -> bool:
    if not w > 0:
        return False
    u, v = px
    if not (math.isfinite(u) and math.isfinite(v)):
        return False
    return 0 <= math.floor(u) < K.width and 0 <= math.floor(v) < K.height


def project_points(points, pose: Pose, K: CameraIntrinsics):
    """Vectorized projection of (..., 3) world points.

    Returns ``(uv, w)`` with ``uv`` of shape (..., 2). Pixels of points with
    ``w <= 0`` are still computed where finite; callers gate on ``w``.
    """
    q = pose.apply(points)
    w = q[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * q[..., 0] / w + K.cx, K.fy * q[..., 1] / w + K.cy], axis=-1)
    return uv, w


def in_fov_array(uv, w, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized :func:`in_fov`."""
    with np.errstate(invalid="ignore"):
        fu = np.floor(uv[..., 0])
        fv = np.floor(uv[..., 1])
        return (w > 0) & (fu >= 0) & (fu < K.width) & (fv >= 0) & (fv < K.height)


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """World-to-camera pose of a camera at ``eye`` whose optical axis points at ``target``.

    Camera axes follow the image convention: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    nx = np.linalg.norm(x)
    if nx < 1e-9:
        raise InvalidArgumentError("viewing direction parallel to up vector")
    x /= nx
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return Pose(R, -R @ eye)
