"""Similarity between projected 3D lines and detected 2D lines, and coarse matching."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._kernels import best_matches
from .errors import DegenerateProjectionError, InvalidArgumentError, ParseError
from .geometry import CameraIntrinsics, PixelPoint, Pose
from .linemap import VisibleSet

log = logging.getLogger(__name__)

MIN_DETECTION_LENGTH = 2.0
MIN_PROJECTION_LENGTH = 1e-6


@dataclass(frozen=True)
class LineSegment2:
    start: PixelPoint
    end: PixelPoint
    frame_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "start", PixelPoint(float(self.start[0]), float(self.start[1])))
        object.__setattr__(self, "end", PixelPoint(float(self.end[0]), float(self.end[1])))
        if not all(math.isfinite(v) for v in (*self.start, *self.end)):
            raise InvalidArgumentError("non-finite detection endpoint")

    @property
    def length(self) -> float:
        return math.hypot(self.end.u - self.start.u, self.end.v - self.start.v)


class InfiniteLineCoeffs(NamedTuple):
    """``A*u + B*v + C = 0`` with ``A**2 + B**2 == 1``."""

    A: float
    B: float
    C: float


class LineDistance(NamedTuple):
    theta: float
    d: float
    overlap_len: float


@dataclass(frozen=True, eq=False)
class Correspondence:
    line3_id: int
    line2_index: int
    distance: LineDistance
    projected: tuple[PixelPoint, PixelPoint]
    coeffs: InfiniteLineCoeffs
    points3: np.ndarray  # (2, 3) world endpoints of the matched visible subsegment


def line_coeffs(l: LineSegment2) -> InfiniteLineCoeffs:
    du = l.end.u - l.start.u
    dv = l.end.v - l.start.v
    n = math.hypot(du, dv)
    if n < MIN_PROJECTION_LENGTH:
        raise InvalidArgumentError("degenerate 2D segment")
    A, B = -dv / n, du / n
    return InfiniteLineCoeffs(A, B, -(A * l.start.u + B * l.start.v))


def _unit(p, q):
    d = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
    n = float(np.hypot(d[0], d[1]))
    return d, n


def angle_distance(l2: LineSegment2, proj) -> float:
    """Unsigned angle between the two segment directions, folded into [0, pi/2]."""
    vt, nt = _unit(l2.start, l2.end)
    vu, nu = _unit(proj[0], proj[1])
    if nu < MIN_PROJECTION_LENGTH:
        raise DegenerateProjectionError("projected segment collapses to a point")
    if nt < MIN_PROJECTION_LENGTH:
        raise InvalidArgumentError("degenerate 2D segment")
    c = abs(float(vt @ vu)) / (nt * nu)
    return math.acos(min(1.0, c))


def endpoint_line_distance(coeffs: InfiniteLineCoeffs, proj) -> float:
    A, B, C = coeffs
    return sum(abs(A * p[0] + B * p[1] + C) for p in proj)


def overlap_length(l2: LineSegment2, proj) -> float:
    """Length along ``l2`` covered by the orthogonal projections of ``proj``'s endpoints."""
    ps = np.asarray(l2.start, dtype=float)
    d = np.asarray(l2.end, dtype=float) - ps
    L2 = float(d @ d)
    if L2 == 0.0:
        raise InvalidArgumentError("degenerate 2D segment")
    alphas = [min(1.0, max(0.0, float((np.asarray(p, dtype=float) - ps) @ d) / L2)) for p in proj]
    return abs(alphas[0] - alphas[1]) * math.sqrt(L2)


def detection_arrays(detections):
    """``(starts, ends, coeffs)`` arrays for a list of :class:`LineSegment2`."""
    arr = np.array([(*l.start, *l.end) for l in detections], dtype=float).reshape(-1, 4)
    s, e = arr[:, :2], arr[:, 2:]
    d = e - s
    n = np.hypot(d[:, 0], d[:, 1])
    if np.any(n < MIN_PROJECTION_LENGTH):
        raise InvalidArgumentError("degenerate 2D segment")
    A, B = -d[:, 1] / n, d[:, 0] / n
    H = np.stack([A, B, -(A * s[:, 0] + B * s[:, 1])], axis=1)
    return s, e, H


def match_lines(
    visible: VisibleSet,
    detections,
    pose: Pose,
    K: CameraIntrinsics,
    theta0: float,
    d0: float,
) -> list[Correspondence]:
    """Pick, for every detection, the visible 3D line with ``theta < theta0`` and ``d < d0``.

    Among admissible lines the smallest ``d`` wins; ties go to the larger
    overlap, then to the smaller 3D line id. 3D lines may serve several
    detections. Output is ordered by detection index.
    """
    if theta0 <= 0 or d0 <= 0:
        raise InvalidArgumentError("thresholds must be positive")
    if not isinstance(visible, VisibleSet):
        visible = VisibleSet.from_lines(visible)
    if len(visible) == 0 or len(detections) == 0:
        return []

    ds, de, H = detection_arrays(detections)
    choice, theta, d, overlap, us, ue = best_matches(
        H, ds, de, visible.starts, visible.ends, pose.rotation, pose.translation,
        K.fx, K.fy, K.cx, K.cy, visible.source_ids, theta0, d0, MIN_PROJECTION_LENGTH,
    )
    chosen = np.flatnonzero(choice >= 0)
    vis_idx = choice[chosen]
    ids = visible.source_ids[vis_idx]
    pts = np.stack([visible.starts[vis_idx], visible.ends[vis_idx]], axis=1)
    proj_s, proj_e = us[vis_idx].tolist(), ue[vis_idx].tolist()
    rows = zip(chosen.tolist(), ids.tolist(), theta[chosen].tolist(), d[chosen].tolist(),
               overlap[chosen].tolist(), H[chosen].tolist(), proj_s, proj_e, pts)
    out = [
        Correspondence(
            line3_id=line_id,
            line2_index=i,
            distance=LineDistance(th, dd, ov),
            projected=(PixelPoint(*ps), PixelPoint(*pe)),
            coeffs=InfiniteLineCoeffs(*h),
            points3=p3,
        )
        for i, line_id, th, dd, ov, h, ps, pe, p3 in rows
    ]
    return out


def load_detections(path, min_length: float = MIN_DETECTION_LENGTH) -> dict[int, list[LineSegment2]]:
    """Read ``frame_id x1 y1 x2 y2`` rows grouped by frame, dropping short segments."""
    path = Path(path)
    frames: dict[int, list[LineSegment2]] = defaultdict(list)
    last_frame = None
    dropped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 5:
                raise ParseError(path, line_no, f"expected 5 fields, got {len(fields)}")
            try:
                frame_id = int(fields[0])
                x1, y1, x2, y2 = (float(f) for f in fields[1:])
                seg = LineSegment2((x1, y1), (x2, y2), frame_id)
            except (ValueError, InvalidArgumentError) as exc:
                raise ParseError(path, line_no, str(exc)) from None
            if last_frame is not None and frame_id < last_frame:
                raise ParseError(path, line_no, f"frame id {frame_id} after {last_frame}")
            last_frame = frame_id
            if seg.length < min_length:
                dropped += 1
                continue
            frames[frame_id].append(seg)
    if dropped:
        log.info("%s: dropped %d detection(s) shorter than %g px", path, dropped, min_length)
    return dict(frames)


def format_detections(frames) -> str:
    """Inverse of :func:`load_detections` for a ``{frame_id: [LineSegment2]}`` mapping."""
    rows = []
    for frame_id in sorted(frames):
        for l in frames[frame_id]:
            rows.append(" ".join([str(int(frame_id)), *(repr(float(v)) for v in (*l.start, *l.end))]))
    return "".join(r + "\n" for r in rows)


def save_detections(frames, path) -> None:
    Path(path).write_text(format_detections(frames), encoding="utf-8")
