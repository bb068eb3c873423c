import logging
import math

import numpy as np
import pytest

from conftest import random_pose
from lineloc.errors import ParseError
from lineloc.geometry import CameraIntrinsics, Pose, in_fov, look_at, project_point
from lineloc.linemap import LineMap, format_line_map, load_line_map, visible_lines
from lineloc.synth import SceneSpec, generate_scene


def dense_visible_ratio(anchor, other, pose, K, step=1e-3):
    """Largest ratio r on a 1e-3 grid such that every sample up to r is in view."""
    last = 0.0
    for k in range(1, int(round(1 / step)) + 1):
        r = k * step
        px, w = _project(anchor + r * (other - anchor), pose, K)
        if not in_fov(px, w, K):
            break
        last = r
    return last


def _project(P, pose, K):
    q = pose.rotation @ P + pose.translation
    return ((K.fx * q[0] / q[2] + K.cx, K.fy * q[1] / q[2] + K.cy) if q[2] != 0 else (math.inf, math.inf)), q[2]


def point_segment_distance(p, a, b):
    d = b - a
    t = min(1.0, max(0.0, float((p - a) @ d / (d @ d))))
    return float(np.linalg.norm(a + t * d - p))


class TestLoad:
    def test_single_row(self, tmp_path):
        f = tmp_path / "m.txt"
        f.write_text("0 0 0 1 0 0\n")
        m = load_line_map(f)
        assert len(m) == 1
        assert m[0].start.tolist() == [0, 0, 0] and m[0].end.tolist() == [1, 0, 0] and m[0].id == 0

    def test_empty_file(self, tmp_path):
        f = tmp_path / "m.txt"
        f.write_text("")
        assert len(load_line_map(f)) == 0

    def test_degenerate_dropped_with_count(self, tmp_path, caplog):
        f = tmp_path / "m.txt"
        f.write_text("# comment\n0 0 0 0 0 0\n1 1 1 2 2 2\n")
        with caplog.at_level(logging.WARNING):
            m = load_line_map(f)
        assert len(m) == 1 and m.dropped == 1
        assert "1 degenerate" in caplog.text

    @pytest.mark.parametrize("row, line", [("0 0 0 1 0\n", 2), ("0 0 0 1 0 x\n", 2)])
    def test_malformed_row(self, tmp_path, row, line):
        f = tmp_path / "m.txt"
        f.write_text("0 0 0 1 0 0\n" + row)
        with pytest.raises(ParseError) as exc:
            load_line_map(f)
        assert exc.value.line_no == line
        assert f":{line}:" in str(exc.value)

    def test_missing_file(self, tmp_path):
        with pytest.raises(OSError):
            load_line_map(tmp_path / "nope.txt")

    def test_round_trip(self, tmp_path):
        m = generate_scene(SceneSpec(seed=3))
        f = tmp_path / "m.txt"
        f.write_text(format_line_map(m))
        back = load_line_map(f)
        assert np.array_equal(back.starts, m.starts) and np.array_equal(back.ends, m.ends)

    def test_ids_dense(self):
        m = generate_scene(SceneSpec(seed=1))
        assert [s.id for s in m] == list(range(len(m)))


class TestVisibleExamples:
    def test_fully_inside_unchanged(self, K100):
        m = LineMap([[-0.5, 0, 2]], [[0.5, 0.2, 3]])
        vis = visible_lines(m, Pose.identity(), K100)
        assert len(vis) == 1
        assert np.array_equal(vis[0].start, m.starts[0]) and np.array_equal(vis[0].end, m.ends[0])

    def test_partial_walk_stops_at_six(self, K100):
        m = LineMap([[0, 0, 2]], [[10, 0, 2]])
        vis = visible_lines(m, Pose.identity(), K100)
        assert len(vis) == 1
        np.testing.assert_allclose(vis[0].start, [0, 0, 2], atol=0)
        np.testing.assert_allclose(vis[0].end, [6, 0, 2], atol=1e-12)

    def test_partial_agrees_with_dense_oracle(self, K100):
        a, b = np.array([0.0, 0, 2]), np.array([10.0, 0, 2])
        r = dense_visible_ratio(a, b, Pose.identity(), K100)
        assert math.floor(r * 10 + 1e-9) == 6

    def test_reversed_segment_keeps_orientation(self, K100):
        m = LineMap([[10, 0, 2]], [[0, 0, 2]])
        vis = visible_lines(m, Pose.identity(), K100)
        np.testing.assert_allclose(vis[0].start, [6, 0, 2], atol=1e-12)
        np.testing.assert_allclose(vis[0].end, [0, 0, 2], atol=0)

    def test_crossing_segment_discarded(self, K100):
        m = LineMap([[-20, 0, 2]], [[20, 0, 2]])
        px, w = project_point([0, 0, 2], Pose.identity(), K100)
        assert in_fov(px, w, K100)  # middle is visible
        assert len(visible_lines(m, Pose.identity(), K100)) == 0

    def test_first_sample_outside_drops_segment(self, K100):
        # visible endpoint at the right edge, first 0.1 step already outside
        m = LineMap([[6.38, 0, 2]], [[16.38, 0, 2]])
        assert len(visible_lines(m, Pose.identity(), K100)) == 0

    def test_empty_map(self, K100):
        assert len(visible_lines(LineMap([], []), Pose.identity(), K100)) == 0


@pytest.fixture(scope="module")
def random_cases():
    rng = np.random.default_rng(99)
    K = CameraIntrinsics(300.0, 300.0, 320.0, 240.0, 640, 480)
    m = generate_scene(SceneSpec("box-room", (10, 8, 3), 200, 5))
    poses = [look_at(rng.uniform([1, 1, 0.5], [9, 7, 2.5]), rng.uniform([0, 0, 0], [10, 8, 3])) for _ in range(20)]
    return m, K, poses


class TestVisibleProperties:
    def test_endpoints_in_fov(self, random_cases):
        m, K, poses = random_cases
        for pose in poses:
            for vl in visible_lines(m, pose, K):
                for P in (vl.start, vl.end):
                    px, w = project_point(P, pose, K)
                    assert in_fov(px, w, K)

    def test_subsegment_of_original(self, random_cases):
        m, K, poses = random_cases
        checked = 0
        for pose in poses:
            for vl in visible_lines(m, pose, K):
                a, b = m.starts[vl.source_id], m.ends[vl.source_id]
                assert point_segment_distance(vl.start, a, b) < 1e-9
                assert point_segment_distance(vl.end, a, b) < 1e-9
                assert np.array_equal(vl.start, a) or np.array_equal(vl.end, b)
                checked += 1
        assert checked > 100

    def test_sorted_by_source_id(self, random_cases):
        m, K, poses = random_cases
        for pose in poses:
            ids = visible_lines(m, pose, K).source_ids
            assert np.all(np.diff(ids) > 0)

    def test_larger_image_never_sees_fewer(self, random_cases):
        m, K, poses = random_cases
        big = CameraIntrinsics(K.fx, K.fy, K.cx, K.cy, 2 * K.width, 2 * K.height)
        for pose in poses:
            assert len(visible_lines(m, pose, big)) >= len(visible_lines(m, pose, K))

    def test_matches_per_segment_reference(self, random_cases):
        m, K, poses = random_cases
        for pose in poses[:5]:
            expect = {}
            for seg in m:
                sv = in_fov(*project_point(seg.start, pose, K), K) if _safe_w(seg.start, pose) else False
                ev = in_fov(*project_point(seg.end, pose, K), K) if _safe_w(seg.end, pose) else False
                if sv and ev:
                    expect[seg.id] = (seg.start, seg.end)
                elif sv or ev:
                    anchor, other = (seg.start, seg.end) if sv else (seg.end, seg.start)
                    last = None
                    for k in range(1, 10):
                        P = anchor + k / 10 * (other - anchor)
                        if not (_safe_w(P, pose) and in_fov(*project_point(P, pose, K), K)):
                            break
                        last = P
                    if last is not None:
                        expect[seg.id] = (seg.start, last) if sv else (last, seg.end)
            got = {vl.source_id: (vl.start, vl.end) for vl in visible_lines(m, pose, K)}
            assert got.keys() == expect.keys()
            for i in got:
                np.testing.assert_allclose(got[i][0], expect[i][0], atol=1e-12)
                np.testing.assert_allclose(got[i][1], expect[i][1], atol=1e-12)


def _safe_w(P, pose):
    return abs((pose.rotation @ P + pose.translation)[2]) > 1e-12


def test_random_pose_maps_do_not_crash(K100, rng):
    m = LineMap(rng.normal(size=(50, 3)) * 5, rng.normal(size=(50, 3)) * 5)
    for _ in range(20):
        vis = visible_lines(m, random_pose(rng), K100)
        assert len(vis) <= len(m)
