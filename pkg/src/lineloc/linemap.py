"""3D line-segment maps and per-frame visibility extraction."""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, ParseError
from ._kernels import visible_segments
from .geometry import CameraIntrinsics, Pose

log = logging.getLogger(__name__)

MIN_SEGMENT_LENGTH = 1e-6
SAMPLE_RATIO = 0.1
_N_STEPS = 10


@dataclass(frozen=True, eq=False)
class LineSegment3:
    start: np.ndarray
    end: np.ndarray
    id: int

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.end - self.start))


class LineMap(Sequence):
    """Immutable ordered collection of 3D segments with dense ids.

    Endpoints live in two (n, 3) arrays; indexing yields :class:`LineSegment3`.
    """

    def __init__(self, starts, ends, dropped: int = 0):
        starts = np.array(starts, dtype=float).reshape(-1, 3)
        ends = np.array(ends, dtype=float).reshape(-1, 3)
        if starts.shape != ends.shape:
            raise InvalidArgumentError("start/end arrays differ in shape")
        if not (np.all(np.isfinite(starts)) and np.all(np.isfinite(ends))):
            raise InvalidArgumentError("non-finite map coordinates")
        if np.any(np.linalg.norm(ends - starts, axis=1) < MIN_SEGMENT_LENGTH):
            raise InvalidArgumentError("degenerate segment in map")
        starts.flags.writeable = False
        ends.flags.writeable = False
        self.starts = starts
        self.ends = ends
        self.dropped = dropped

    @classmethod
    def from_segments(cls, segments) -> LineMap:
        """Build from ``(start, end)`` pairs, silently dropping degenerate ones."""
        arr = np.array([np.concatenate([np.ravel(a), np.ravel(b)]) for a, b in segments], dtype=float)
        arr = arr.reshape(-1, 6)
        keep = np.linalg.norm(arr[:, 3:] - arr[:, :3], axis=1) >= MIN_SEGMENT_LENGTH
        return cls(arr[keep, :3], arr[keep, 3:], dropped=int((~keep).sum()))

    def __len__(self):
        return len(self.starts)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        if i < 0:
            i += len(self)
        return LineSegment3(self.starts[i], self.ends[i], int(i))

    @property
    def segments(self) -> list[LineSegment3]:
        return list(self)


def load_line_map(path) -> LineMap:
    """Read ``x1 y1 z1 x2 y2 z2`` rows; degenerate rows are dropped and counted."""
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 6:
                raise ParseError(path, line_no, f"expected 6 fields, got {len(fields)}")
            try:
                values = [float(f) for f in fields]
            except ValueError:
                raise ParseError(path, line_no, f"non-numeric field in {line!r}") from None
            if not np.all(np.isfinite(values)):
                raise ParseError(path, line_no, "non-finite coordinate")
            rows.append(values)
    line_map = LineMap.from_segments([(r[:3], r[3:]) for r in rows])
    if line_map.dropped:
        log.warning("%s: dropped %d degenerate segment(s)", path, line_map.dropped)
    return line_map


def format_line_map(line_map: LineMap) -> str:
    rows = np.hstack([line_map.starts, line_map.ends])
    return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in rows)


def save_line_map(line_map: LineMap, path) -> None:
    Path(path).write_text(format_line_map(line_map), encoding="utf-8")


@dataclass(frozen=True, eq=False)
class VisibleLine:
    source_id: int
    start: np.ndarray
    end: np.ndarray


class VisibleSet(Sequence):
    """Visible (sub)segments for one query pose, sorted by source id."""

    def __init__(self, source_ids, starts, ends):
        self.source_ids = np.asarray(source_ids, dtype=np.int64)
        self.starts = np.asarray(starts, dtype=float).reshape(-1, 3)
        self.ends = np.asarray(ends, dtype=float).reshape(-1, 3)

    def __len__(self):
        return len(self.source_ids)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return VisibleLine(int(self.source_ids[i]), self.starts[i], self.ends[i])

    @classmethod
    def from_lines(cls, lines) -> VisibleSet:
        lines = list(lines)
        return cls(
            [vl.source_id for vl in lines],
            [vl.start for vl in lines],
            [vl.end for vl in lines],
        )


def visible_lines(line_map: LineMap, pose: Pose, K: CameraIntrinsics) -> VisibleSet:
    """Segments (or trimmed subsegments) of the map visible from ``pose``.

    Both endpoints in view: the whole segment is kept. One endpoint in view:
    points are sampled from the visible endpoint toward the other at steps of
    a tenth of the segment length, and the walk stops at the first sample that
    leaves the image; the last good sample becomes the new far endpoint.
    Both endpoints out of view: the segment is dropped, even when its middle
    crosses the image.
    """
    if len(line_map) == 0:
        return VisibleSet([], np.zeros((0, 3)), np.zeros((0, 3)))
    ids, starts, ends = visible_segments(
        line_map.starts, line_map.ends, pose.rotation, pose.translation,
        K.fx, K.fy, K.cx, K.cy, K.width, K.height, _N_STEPS,
    )
    return VisibleSet(ids, starts, ends)
