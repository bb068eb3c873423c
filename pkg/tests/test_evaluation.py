import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from scipy.spatial.transform import Rotation

from conftest import random_pose
from lineloc.errors import DegenerateAlignmentError, InvalidArgumentError, NoOverlapError
from lineloc.evaluation import (
    DEFAULT_RPE_LENGTHS,
    align,
    associate,
    ate_rmse,
    loop_gap,
    metrics_csv,
    rpe_boxplot_svg,
    rpe_errors,
    rpe_over_lengths,
    umeyama,
)
from lineloc.geometry import Pose, compose, invert, look_at
from lineloc.synth import NoiseSpec, SceneSpec, corrupt_odometry, generate_trajectory
from lineloc.trajectory import Trajectory, load_trajectory, save_trajectory


def from_centers(centers, stamps=None, target=(0.0, 0.0, -5.0)):
    stamps = [0.1 * k for k in range(len(centers))] if stamps is None else stamps
    return Trajectory(list(stamps), [look_at(c, target, up=(0, 1, 0)) for c in centers])


def circle(n=60, r=3.0):
    s = np.linspace(0, 2 * math.pi, n, endpoint=False)
    return np.stack([r * np.cos(s), r * np.sin(s), 0.3 * np.sin(3 * s)], axis=1)


def world_moved(traj, G):
    """Same motion described in another world frame (camera-to-world poses gain G on the left)."""
    return Trajectory(traj.timestamps, [compose(p, invert(G)) for p in traj.poses])


@pytest.fixture(scope="module")
def gt_loop():
    return generate_trajectory(SceneSpec("box-room", (24, 18, 4)), 200, "loop", 0, path_length=50.0)


class TestAssociate:
    def test_identical(self):
        t = from_centers(circle(10))
        assert associate(t, t) == [(i, i) for i in range(10)]

    def test_disjoint(self):
        a = from_centers(circle(5))
        b = from_centers(circle(5), stamps=[10 + 0.1 * k for k in range(5)])
        with pytest.raises(NoOverlapError):
            associate(a, b)

    def test_nonpositive_tolerance(self):
        t = from_centers(circle(5))
        with pytest.raises(InvalidArgumentError):
            associate(t, t, 0.0)

    def test_against_exhaustive_and_assignment_oracles(self):
        rng = np.random.default_rng(5)
        max_dt = 0.02
        for _ in range(200):
            n = int(rng.integers(2, 8))
            ta = np.cumsum(rng.uniform(0.05, 0.1, n))
            tb = np.sort(ta + rng.uniform(-max_dt, max_dt, n) * 0.9)
            a = from_centers(circle(n), stamps=ta)
            b = from_centers(circle(n), stamps=tb)
            got = associate(a, b, max_dt)
            # exhaustive: maximum number of pairs, then minimum total |dt|
            best = None
            for perm in itertools.permutations(range(n)):
                pairs = [(i, j) for i, j in enumerate(perm) if abs(ta[i] - tb[j]) <= max_dt]
                key = (-len(pairs), sum(abs(ta[i] - tb[j]) for i, j in pairs))
                if best is None or key < best[0]:
                    best = (key, sorted(pairs))
            assert got == best[1]
            cost = np.abs(ta[:, None] - tb[None, :])
            rows, cols = linear_sum_assignment(np.where(cost <= max_dt, cost, 1e6))
            assert got == sorted((int(i), int(j)) for i, j in zip(rows, cols) if cost[i, j] <= max_dt)

    def test_each_pose_used_once(self):
        a = from_centers(circle(3), stamps=[0.0, 0.01, 0.02])
        b = from_centers(circle(2), stamps=[0.005, 0.015])
        pairs = associate(a, b, 0.02)
        assert len({i for i, _ in pairs}) == len(pairs) == len({j for _, j in pairs}) == 2


class TestAlign:
    def test_identity(self):
        t = from_centers(circle())
        al = align(t, t)
        np.testing.assert_allclose(al.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(al.translation, 0, atol=1e-12)
        assert al.n_pairs == 60

    def test_exact_recovery(self, rng):
        t = from_centers(circle())
        for _ in range(20):
            G = random_pose(rng, max_trans=10)
            moved = world_moved(t, G)
            al = align(moved, t)
            # moved centers are G applied to t's centers; alignment must undo G
            np.testing.assert_allclose(al.rotation, G.rotation.T, atol=1e-9)
            np.testing.assert_allclose(al.translation, invert(G).translation, atol=1e-9)

    def test_uses_only_first_n(self, rng):
        t = from_centers(circle(100))
        G = random_pose(rng)
        est = Trajectory(t.timestamps, [compose(p, invert(G)) if k < 50 else p for k, p in enumerate(t.poses)])
        al = align(est, t, n_poses=50)
        np.testing.assert_allclose(al.rotation, G.rotation.T, atol=1e-9)
        assert al.n_pairs == 50

    def test_noise_residual_matches_dof_count(self):
        rng = np.random.default_rng(0)
        n, sigma = 50, 0.05
        pts = rng.uniform(-5, 5, (n, 3))
        rms = []
        for _ in range(400):
            noisy = pts + rng.normal(0, sigma, pts.shape)
            R, t, _ = umeyama(noisy, pts)
            res = noisy @ R.T + t - pts
            rms.append(np.mean(np.sum(res * res, axis=1)))
        # six fitted parameters leave 3n - 6 degrees of freedom
        assert math.sqrt(np.mean(rms)) == pytest.approx(sigma * math.sqrt(3 - 6 / n), rel=0.1)

    def test_collinear_rejected(self):
        t = from_centers([[k, 2 * k, 0.0] for k in range(10)], target=(0, 0, 100))
        with pytest.raises(DegenerateAlignmentError):
            align(t, t)

    def test_scale_option(self):
        pts = circle()
        rng = np.random.default_rng(2)
        R = Rotation.random(random_state=rng).as_matrix()
        R_s, t_s, s = umeyama(2.5 * pts @ R.T + [1, 2, 3], pts, with_scale=True)
        assert s == pytest.approx(0.4, rel=1e-12)
        np.testing.assert_allclose(s * (2.5 * pts @ R.T + [1, 2, 3]) @ R_s.T + t_s, pts, atol=1e-9)


class TestAte:
    def test_zero_for_identical(self):
        t = from_centers(circle())
        assert ate_rmse(t, t, align(t, t)) == pytest.approx(0, abs=1e-12)

    def test_radial_offset_is_not_compensable(self):
        gt = from_centers(circle(r=3.0))
        est = from_centers(circle(r=3.0) * [3.1 / 3.0, 3.1 / 3.0, 1.0])
        assert ate_rmse(est, gt, align(est, gt)) == pytest.approx(0.1, abs=1e-9)

    def test_against_direct_recomputation(self, rng):
        gt = from_centers(circle())
        est = from_centers(circle() + rng.normal(0, 0.1, (60, 3)))
        al = align(est, gt)
        direct = math.sqrt(sum(
            float(np.sum((al.rotation @ e.camera_center() + al.translation - g.camera_center()) ** 2))
            for e, g in zip(est.poses, gt.poses)) / 60)
        assert ate_rmse(est, gt, al) == pytest.approx(direct, rel=1e-12)

    def test_invariant_under_shared_rigid_motion(self, rng):
        gt = from_centers(circle())
        est = from_centers(circle() + rng.normal(0, 0.1, (60, 3)))
        base = ate_rmse(est, gt, align(est, gt))
        G = random_pose(rng, max_trans=20)
        moved = ate_rmse(world_moved(est, G), world_moved(gt, G), align(world_moved(est, G), world_moved(gt, G)))
        assert abs(moved - base) < 1e-9


class TestRpe:
    def test_zero_for_identical(self, gt_loop):
        for v in rpe_over_lengths(gt_loop, gt_loop, DEFAULT_RPE_LENGTHS).values():
            assert v == pytest.approx(0, abs=1e-12)

    def test_grows_with_length_under_drift(self, gt_loop):
        odom = corrupt_odometry(gt_loop, NoiseSpec(odom_drift_rate=0.005), 0)
        vals = [rpe_over_lengths(odom, gt_loop, [L])[L] for L in (2, 5, 10, 20)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_default_lengths_accepted(self, gt_loop):
        out = rpe_over_lengths(gt_loop, gt_loop, DEFAULT_RPE_LENGTHS)
        assert list(out) == [7.0, 15.0, 22.0, 30.0, 37.0]
        assert all(v is not None for v in out.values())

    def test_unreachable_length_absent(self, gt_loop):
        out = rpe_over_lengths(gt_loop, gt_loop, [10.0, 80.0])
        assert out[80.0] is None and out[10.0] is not None

    def test_invalid_length(self, gt_loop):
        with pytest.raises(InvalidArgumentError):
            rpe_errors(gt_loop, gt_loop, [0.0])

    def test_gauge_free(self, gt_loop, rng):
        odom = corrupt_odometry(gt_loop, NoiseSpec(0.001, 0.002, 0.005), 3)
        base = rpe_errors(odom, gt_loop, DEFAULT_RPE_LENGTHS)
        moved = rpe_errors(world_moved(odom, random_pose(rng, max_trans=30)), gt_loop, DEFAULT_RPE_LENGTHS)
        for L in base:
            assert np.abs(base[L] - moved[L]).max() < 1e-9

    def test_segment_count(self, gt_loop):
        cum = np.concatenate([[0], np.cumsum(np.linalg.norm(np.diff(gt_loop.positions(), axis=0), axis=1))])
        errs = rpe_errors(gt_loop, gt_loop, [7.0])[7.0]
        assert len(errs) == int(np.sum(cum + 7.0 <= cum[-1]))


class TestLoopGap:
    def test_closed_loop(self, gt_loop):
        assert loop_gap(gt_loop) < 1e-6

    def test_drifting_odometry(self, gt_loop):
        odom = corrupt_odometry(gt_loop, NoiseSpec(odom_drift_rate=0.005), 2)
        path = np.linalg.norm(np.diff(gt_loop.positions(), axis=0), axis=1).sum()
        assert loop_gap(odom) == pytest.approx(0.005 * path, rel=1e-6)

    def test_two_identical_poses(self):
        assert loop_gap(Trajectory([0.0, 1.0], [Pose.identity()] * 2)) == 0.0

    def test_needs_two(self):
        with pytest.raises(InvalidArgumentError):
            loop_gap(Trajectory([0.0], [Pose.identity()]))


def test_row_order_does_not_matter(tmp_path, gt_loop):
    odom = corrupt_odometry(gt_loop, NoiseSpec(0.001, 0.002, 0.005), 1)
    save_trajectory(odom, tmp_path / "a.txt")
    lines = (tmp_path / "a.txt").read_text().splitlines(keepends=True)
    rng = np.random.default_rng(0)
    (tmp_path / "b.txt").write_text("".join(lines[i] for i in rng.permutation(len(lines))))
    a, b = load_trajectory(tmp_path / "a.txt"), load_trajectory(tmp_path / "b.txt")
    assert ate_rmse(a, gt_loop, align(a, gt_loop)) == ate_rmse(b, gt_loop, align(b, gt_loop))
    assert rpe_over_lengths(a, gt_loop, [7.0]) == rpe_over_lengths(b, gt_loop, [7.0])


def test_metrics_csv_format():
    text = metrics_csv([("run.pairs", 12, "count"), ("run.ate_rmse", 0.25, "m"), ("run.rpe_rmse_80m", None, "m")])
    assert text == "metric,value,unit\nrun.pairs,12,count\nrun.ate_rmse,0.25,m\nrun.rpe_rmse_80m,,m\n"


def test_svg_is_deterministic(gt_loop):
    odom = corrupt_odometry(gt_loop, NoiseSpec(0.001, 0.002, 0.005), 1)
    series = {"odom": rpe_errors(odom, gt_loop, DEFAULT_RPE_LENGTHS)}
    a, b = rpe_boxplot_svg(series), rpe_boxplot_svg(series)
    assert a == b and a.lstrip().startswith("<?xml") and "<svg" in a
