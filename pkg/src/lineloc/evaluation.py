"""Trajectory metrics: association, rigid alignment, ATE, RPE, loop gap."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAlignmentError, InvalidArgumentError, NoOverlapError
from .geometry import compose, invert
from .trajectory import Trajectory

DEFAULT_RPE_LENGTHS = (7.0, 15.0, 22.0, 30.0, 37.0)


def associate(a: Trajectory, b: Trajectory, max_dt: float = 0.02) -> list[tuple[int, int]]:
    """Greedy nearest-timestamp pairing; each pose is used at most once.

    Candidate pairs within ``max_dt`` are taken in order of increasing time
    difference (ties by index). Returns ``(index_in_a, index_in_b)`` sorted by
    the first index.
    """
    if max_dt <= 0:
        raise InvalidArgumentError("max_dt must be positive")
    ta = np.asarray(a.timestamps, dtype=float)
    tb = np.asarray(b.timestamps, dtype=float)
    lo = np.searchsorted(tb, ta - max_dt, side="left")
    hi = np.searchsorted(tb, ta + max_dt, side="right")
    cand = []
    for i in range(ta.size):
        for j in range(lo[i], hi[i]):
            dt = abs(ta[i] - tb[j])
            if dt <= max_dt:
                cand.append((dt, i, j))
    cand.sort()
    used_a, used_b = set(), set()
    pairs = []
    for _, i, j in cand:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        pairs.append((i, j))
    if not pairs:
        raise NoOverlapError("no timestamps within max_dt of each other")
    pairs.sort()
    return pairs


@dataclass(frozen=True)
class AlignmentResult:
    rotation: np.ndarray
    translation: np.ndarray
    scale: float
    n_pairs: int

    def apply(self, points) -> np.ndarray:
        return self.scale * np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def _paired_positions(est: Trajectory, gt: Trajectory, pairs):
    if pairs is None:
        if len(est) != len(gt):
            raise InvalidArgumentError("trajectories differ in length; pass explicit pairs")
        pairs = [(i, i) for i in range(len(est))]
    pe = est.positions()
    pg = gt.positions()
    ie = np.array([p[0] for p in pairs], dtype=int)
    ig = np.array([p[1] for p in pairs], dtype=int)
    return pe[ie], pg[ig], pairs


def umeyama(src, dst, with_scale: bool = False):
    """Least-squares ``dst ≈ s * R @ src + t`` for (n, 3) point sets."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    sv = np.linalg.svd(xs, compute_uv=False)
    if src.shape[0] < 3 or sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise DegenerateAlignmentError("alignment needs at least 3 non-collinear positions")
    cov = xd.T @ xs / src.shape[0]
    U, S, Vt = np.linalg.svd(cov)
    D = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        D[2, 2] = -1.0
    R = U @ D @ Vt
    s = 1.0
    if with_scale:
        s = float(np.trace(np.diag(S) @ D) / (xs**2).sum(axis=1).mean())
    t = mu_d - s * R @ mu_s
    return R, t, s


def align(
    est: Trajectory,
    gt: Trajectory,
    n_poses: int = 200,
    pairs=None,
    with_scale: bool = False,
) -> AlignmentResult:
    """Rigid alignment of estimated positions onto ground truth from the first ``n_poses`` pairs."""
    if n_poses < 1:
        raise InvalidArgumentError("n_poses must be positive")
    pe, pg, pairs = _paired_positions(est, gt, pairs)
    n = min(n_poses, len(pairs))
    R, t, s = umeyama(pe[:n], pg[:n], with_scale)
    return AlignmentResult(R, t, s, n)


def ate_rmse(est: Trajectory, gt: Trajectory, alignment: AlignmentResult, pairs=None) -> float:
    pe, pg, _ = _paired_positions(est, gt, pairs)
    err = alignment.apply(pe) - pg
    return float(math.sqrt(np.mean(np.sum(err * err, axis=1))))


def rpe_errors(est: Trajectory, gt: Trajectory, lengths, pairs=None) -> dict[float, np.ndarray | None]:
    """Per-segment translational relative errors for each requested length.

    Segments start at every paired frame and end at the first frame whose
    accumulated ground-truth path reaches the length. A length no segment can
    reach maps to ``None``.
    """
    if pairs is None:
        if len(est) != len(gt):
            raise InvalidArgumentError("trajectories differ in length; pass explicit pairs")
        pairs = [(i, i) for i in range(len(est))]
    E = [invert(est.poses[i]) for i, _ in pairs]  # camera-to-world
    G = [invert(gt.poses[j]) for _, j in pairs]
    centers = np.array([g.translation for g in G])
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(centers, axis=0), axis=1))])
    out: dict[float, np.ndarray | None] = {}
    for L in lengths:
        L = float(L)
        if L <= 0:
            raise InvalidArgumentError("segment lengths must be positive")
        ends = np.searchsorted(cum, cum + L, side="left")
        errs = []
        for i, j in enumerate(ends):
            if j >= len(cum):
                break
            rel_gt = compose(invert(G[i]), G[j])
            rel_est = compose(invert(E[i]), E[j])
            errs.append(float(np.linalg.norm(compose(invert(rel_gt), rel_est).translation)))
        out[L] = np.array(errs) if errs else None
    return out


def rpe_over_lengths(est: Trajectory, gt: Trajectory, lengths, pairs=None) -> dict[float, float | None]:
    """Translational RPE RMSE per segment length (``None`` where the path is too short)."""
    return {
        L: (None if e is None else float(math.sqrt(np.mean(e * e))))
        for L, e in rpe_errors(est, gt, lengths, pairs).items()
    }


def loop_gap(est: Trajectory) -> float:
    """Distance between the first and last camera positions."""
    if len(est) < 2:
        raise InvalidArgumentError("need at least two poses")
    p = est.positions()
    return float(np.linalg.norm(p[-1] - p[0]))


def metrics_csv(rows) -> str:
    """``metric,value,unit`` text; ``None`` values are written as empty fields."""
    lines = ["metric,value,unit"]
    for name, value, unit in rows:
        if value is None:
            text = ""
        elif isinstance(value, (int, np.integer)):
            text = str(int(value))
        else:
            text = repr(float(value))
        lines.append(f"{name},{text},{unit}")
    return "\n".join(lines) + "\n"


def rpe_boxplot_svg(series: dict[str, dict[float, np.ndarray | None]]) -> str:
    """SVG box plot of RPE errors per segment length, one box group per run.

    Whiskers span min to max, boxes the quartiles.
    """
    import matplotlib
    from matplotlib.figure import Figure

    lengths = sorted({L for errs in series.values() for L in errs})
    fig = Figure(figsize=(7, 4))
    ax = fig.add_subplot()
    n = max(len(series), 1)
    width = 0.8 / n
    for k, (label, errs) in enumerate(series.items()):
        data, pos = [], []
        for i, L in enumerate(lengths):
            e = errs.get(L)
            if e is not None and len(e):
                data.append(e)
                pos.append(i + (k - (n - 1) / 2) * width)
        if data:
            bp = ax.boxplot(data, positions=pos, widths=width * 0.9, whis=(0, 100),
                            patch_artist=True, showfliers=False)
            color = f"C{k}"
            for box in bp["boxes"]:
                box.set_facecolor(color)
                box.set_alpha(0.6)
            ax.plot([], [], color=color, label=label, linewidth=6)
    ax.set_xticks(range(len(lengths)))
    ax.set_xticklabels([f"{L:g}" for L in lengths])
    ax.set_xlabel("segment length [m]")
    ax.set_ylabel("translation error [m]")
    if series:
        ax.legend()
    buf = io.StringIO()
    with matplotlib.rc_context({"svg.hashsalt": "lineloc", "svg.fonttype": "none"}):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()
