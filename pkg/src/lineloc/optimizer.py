"""Pose refinement from 2D-3D line correspondences over a sliding window.

The current pose is parameterized as ``exp(xi) ∘ initial`` and every window
entry ``n`` observes it through its constant offset, ``exp(delta_n) ∘ exp(xi)
∘ initial``. Each correspondence contributes two residuals: the signed
distances (pixels) of its projected 3D endpoints to the detected infinite
2D line.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import window_residuals
from .errors import InvalidArgumentError, NearSingularError, NoValidResidualsError, NumericFailureError
from .geometry import CameraIntrinsics, Pose, compose, exp_map, invert, log_map
from .matching import Correspondence

log = logging.getLogger(__name__)

MIN_RESIDUAL_DEPTH = 1e-6
SATURATION_RESIDUAL = 1e3


@dataclass(frozen=True, eq=False)
class WindowEntry:
    """One keyframe's correspondences and its constant offset from the current frame.

    ``points`` (m, 2, 3), ``coeffs`` (m, 3) and ``offset`` (``exp(delta_xi)``)
    are derived at construction and carried along by ``dataclasses.replace``.
    """

    frame_id: int
    correspondences: tuple[Correspondence, ...] = ()
    delta_xi: np.ndarray = field(default_factory=lambda: np.zeros(6))
    points: np.ndarray | None = None
    coeffs: np.ndarray | None = None
    offset: Pose | None = field(default=None, compare=False)

    def __post_init__(self):
        corrs = tuple(self.correspondences)
        object.__setattr__(self, "correspondences", corrs)
        d = np.array(self.delta_xi, dtype=float).reshape(6)
        d.flags.writeable = False
        object.__setattr__(self, "delta_xi", d)
        if self.points is None or self.coeffs is None:
            pts = np.array([c.points3 for c in corrs], dtype=float).reshape(-1, 2, 3)
            H = np.array([c.coeffs for c in corrs], dtype=float).reshape(-1, 3)
            object.__setattr__(self, "points", pts)
            object.__setattr__(self, "coeffs", H)
        object.__setattr__(self, "offset", exp_map(d))


class SlidingWindow:
    """FIFO of window entries, oldest first; the last entry is the current frame."""

    def __init__(self, n_previous: int, entries=()):
        if n_previous < 0:
            raise InvalidArgumentError("window size must be non-negative")
        self.n_previous = n_previous
        self.entries: deque[WindowEntry] = deque(entries, maxlen=n_previous + 1)
        self._stacked = None

    @property
    def capacity(self) -> int:
        return self.n_previous + 1

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def push(self, entry: WindowEntry) -> None:
        self.entries.append(entry)
        self._stacked = None

    def replace_current(self, correspondences) -> None:
        cur = self.entries[-1]
        self.entries[-1] = replace(cur, correspondences=tuple(correspondences), points=None, coeffs=None)
        self._stacked = None

    def copy(self) -> SlidingWindow:
        return SlidingWindow(self.n_previous, self.entries)

    def correspondence_count(self) -> int:
        return sum(len(e.correspondences) for e in self.entries)

    def stacked(self):
        """Arrays for vectorized evaluation, cached until the window changes.

        Returns ``(points (M,2,3), coeffs (M,3), entry_of (M,), R_offset (E,3,3),
        t_offset (E,3))`` where ``entry_of`` indexes the window entry of each
        correspondence. Entries keep window order, correspondences stored order.
        """
        if self._stacked is None:
            used = [e for e in self.entries if e.correspondences]
            if used:
                pts = np.concatenate([e.points for e in used])
                H = np.concatenate([e.coeffs for e in used])
                entry_of = np.repeat(np.arange(len(used)), [len(e.correspondences) for e in used])
                Rd = np.array([e.offset.rotation for e in used])
                td = np.array([e.offset.translation for e in used])
            else:
                pts, H = np.zeros((0, 2, 3)), np.zeros((0, 3))
                entry_of = np.zeros(0, dtype=np.int64)
                Rd, td = np.zeros((0, 3, 3)), np.zeros((0, 3))
            self._stacked = (pts, H, entry_of, Rd, td)
        return self._stacked


@dataclass(frozen=True)
class SolverConfig:
    max_lm_iterations: int = 50
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    rel_cost_tol: float = 1e-8
    step_tol: float = 1e-10
    huber_delta: float = 0.0

    def __post_init__(self):
        if self.max_lm_iterations < 1:
            raise InvalidArgumentError("max_lm_iterations must be positive")
        if not (self.initial_damping > 0 and self.damping_up > 1 and 0 < self.damping_down < 1):
            raise InvalidArgumentError("invalid damping schedule")
        if self.rel_cost_tol <= 0 or self.step_tol <= 0 or self.huber_delta < 0:
            raise InvalidArgumentError("tolerances must be positive")


@dataclass
class SolveReport:
    pose: Pose
    initial_cost: float
    final_cost: float
    iterations: int
    residual_count: int
    converged: bool
    saturated_count: int = 0
    cond_ratio: float = float("nan")
    cost_trace: list[float] = field(default_factory=list)


def _evaluate(pose: Pose, stacked, K: CameraIntrinsics, with_jacobian: bool):
    P, H, entry_of, Rd, td = stacked
    r, bad, J = window_residuals(P, H, entry_of, Rd, td, pose.rotation, pose.translation, K.fx, K.fy, K.cx, K.cy,
                                 MIN_RESIDUAL_DEPTH, SATURATION_RESIDUAL, with_jacobian)
    return r, bad, (J if with_jacobian else None)


def residuals(xi, window: SlidingWindow, K: CameraIntrinsics, initial: Pose | None = None):
    """Residual vector at ``exp(xi) ∘ initial``; saturated endpoints read ``1e3``."""
    base = Pose.identity() if initial is None else initial
    pose = compose(exp_map(xi), base)
    r, _, _ = _evaluate(pose, window.stacked(), K, with_jacobian=False)
    return r


def jacobian(pose: Pose, window: SlidingWindow, K: CameraIntrinsics) -> np.ndarray:
    """d residuals / d xi at ``xi = 0`` for the update ``exp(xi) ∘ pose``."""
    _, _, J = _evaluate(pose, window.stacked(), K, with_jacobian=True)
    return J


def _huber_weights(r, delta):
    if delta <= 0:
        return None
    a = np.abs(r)
    return np.where(a <= delta, 1.0, delta / np.maximum(a, 1e-300))


def _cost(r, delta):
    if delta <= 0:
        return 0.5 * float(r @ r)
    a = np.abs(r)
    return float(np.sum(np.where(a <= delta, 0.5 * a * a, delta * (a - 0.5 * delta))))


def solve_pose(initial: Pose, window: SlidingWindow, K: CameraIntrinsics, cfg: SolverConfig | None = None) -> SolveReport:
    """Levenberg-Marquardt over a left-multiplicative twist update of the current pose."""
    cfg = cfg or SolverConfig()
    stacked = window.stacked()
    if stacked[0].shape[0] == 0:
        raise NoValidResidualsError("window holds no correspondences")

    pose = initial
    r, bad, J = _evaluate(pose, stacked, K, True)
    if bad.all():
        raise NoValidResidualsError("every endpoint is behind the camera")
    cost = _cost(r, cfg.huber_delta)
    if not math.isfinite(cost):
        raise NumericFailureError("non-finite initial cost")
    initial_cost = cost
    trace = [cost]
    lam = cfg.initial_damping
    converged = False
    iterations = 0

    while iterations < cfg.max_lm_iterations:
        iterations += 1
        w = _huber_weights(r, cfg.huber_delta)
        Jw = J if w is None else J * w[:, None]
        Hn = Jw.T @ J
        grad = Jw.T @ r
        if cost == 0.0 or not np.any(grad):
            converged = True
            break
        damp = lam * (np.diag(Hn) + 1e-12 * max(np.trace(Hn), 1.0))
        try:
            step = -np.linalg.solve(Hn + np.diag(damp), grad)
        except np.linalg.LinAlgError:
            lam *= cfg.damping_up
            continue
        step_norm = float(np.linalg.norm(step))
        candidate = compose(exp_map(step), pose)
        r_new, bad_new, J_new = _evaluate(candidate, stacked, K, True)
        new_cost = _cost(r_new, cfg.huber_delta)
        if not math.isfinite(new_cost):
            raise NumericFailureError("non-finite cost during line search")
        if new_cost < cost and not bad_new.all():
            rel = (cost - new_cost) / cost
            pose, r, bad, J, cost = candidate, r_new, bad_new, J_new, new_cost
            trace.append(cost)
            lam = max(lam * cfg.damping_down, 1e-15)
            if rel < cfg.rel_cost_tol or step_norm < cfg.step_tol:
                converged = True
                break
        else:
            lam *= cfg.damping_up
            if step_norm < cfg.step_tol or lam > 1e16:
                converged = True
                break

    Hn = J.T @ J
    sv = np.linalg.svd(Hn, compute_uv=False)
    cond_ratio = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    return SolveReport(
        pose=pose,
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=iterations,
        residual_count=r.size,
        converged=converged,
        saturated_count=int(bad.sum()),
        cond_ratio=cond_ratio,
        cost_trace=trace,
    )


def cap_correspondences(corrs, m0: int) -> list[Correspondence]:
    """Keep at most ``m0`` correspondences, preferring long overlaps.

    Ties at the cut go to the lower detection index; survivors keep their
    input order.
    """
    if m0 <= 0:
        raise InvalidArgumentError("m0 must be positive")
    corrs = list(corrs)
    if len(corrs) <= m0:
        return corrs
    ranked = sorted(range(len(corrs)), key=lambda i: (-corrs[i].distance.overlap_len, corrs[i].line2_index))
    kept = sorted(ranked[:m0])
    return [corrs[i] for i in kept]


def advance_window(window: SlidingWindow, inter_frame_motion: Pose, new_entry: WindowEntry) -> SlidingWindow:
    """Re-express retained entries relative to the new current frame and push ``new_entry``.

    ``inter_frame_motion`` maps the previous current pose to the new one
    (``P_new = motion ∘ P_prev``), so each stored offset picks up
    ``invert(motion)`` on the right.
    """
    if np.any(new_entry.delta_xi != 0):
        raise InvalidArgumentError("new window entry must carry a zero offset")
    back = invert(inter_frame_motion)
    out = SlidingWindow(window.n_previous)
    for e in window.entries:
        try:
            delta = log_map(compose(e.offset, back))
        except NearSingularError:
            log.warning("evicting window entry for frame %s: offset rotation near pi", e.frame_id)
            continue
        out.entries.append(replace(e, delta_xi=delta))
    out.push(new_entry)
    return out
