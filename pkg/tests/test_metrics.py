import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import by_camera
from meshreg import metrics, synthetic
from meshreg.calibration import calibrate_rig
from meshreg.camera import CameraModel
from meshreg.geometry import Distortion, Intrinsics, RigidTransform
from meshreg.mesh import DepthMap

CAMS = ("depth", "narrow", "wide")
PAIRS = [(a, b) for a in CAMS for b in CAMS if a != b]
Z_NEAR, Z_FAR = 0.3, 1.2


# ---------------------------------------------------------------------------
# normalization


@pytest.mark.parametrize("err,w,h,expected,tol", [
    (1.0, 1000, 1000, 1.0, 0.0),
    (0.55, 3840, 2160, 0.19, 0.005),
    (0.93, 640, 480, 1.68, 0.005),
    (1.16, 512, 512, 2.27, 0.005),
])
def test_normalize_examples(err, w, h, expected, tol):
    assert abs(metrics.normalize(err, w, h) - expected) <= tol


@pytest.mark.parametrize("err,w,h,printed", [(0.93, 640, 480, 1.67), (1.16, 512, 512, 2.26)])
def test_normalize_within_rounding_of_printed_tables(err, w, h, printed):
    assert abs(metrics.normalize(err, w, h) - printed) <= 0.01


def test_normalize_rejects_empty_image():
    with pytest.raises(ValueError):
        metrics.normalize(1.0, 0, 10)


@settings(max_examples=200)
@given(e=st.floats(1e-6, 1e3), k=st.integers(-20, 20), w=st.integers(1, 8000), h=st.integers(1, 8000))
def test_normalize_linear_exact_for_binary_scales(e, k, w, h):
    a = 2.0 ** k
    assert metrics.normalize(a * e, w, h) == a * metrics.normalize(e, w, h)


@settings(max_examples=200)
@given(e=st.floats(1e-6, 1e3), a=st.floats(1e-3, 1e3), w=st.integers(1, 8000), h=st.integers(1, 8000))
def test_normalize_linear(e, a, w, h):
    assert metrics.normalize(a * e, w, h) == pytest.approx(a * metrics.normalize(e, w, h), rel=4.5e-16)


def test_normalize_vectorized():
    e = np.array([0.5, 1.0, 2.0])
    np.testing.assert_array_equal(metrics.normalize(e, 640, 480), [metrics.normalize(x, 640, 480) for x in e])


# ---------------------------------------------------------------------------
# suites


def board_depth_maps(rig, board, poses, **kw):
    return {f"v{i:02d}": synthetic.board_depth_map(rig, board, p, **kw) for i, p in enumerate(poses)}


@pytest.fixture(scope="module")
def flat_suite(flat_rig, board, poses):
    views = by_camera(synthetic.make_checkerboard_views(flat_rig, board, poses, 0.0, seed=1))
    return views, board_depth_maps(flat_rig, board, poses)


@pytest.fixture(scope="module")
def noisy_flat_suite(flat_rig, board, poses):
    views = by_camera(synthetic.make_checkerboard_views(flat_rig, board, poses, 0.1, seed=5))
    maps = {f"v{i:02d}": synthetic.board_depth_map(flat_rig, board, p, noise_sigma=0.003, seed=100 + i)
            for i, p in enumerate(poses)}
    return views, maps


def test_exact_extrinsic_error(rig, exact_views):
    views = by_camera(exact_views)
    for a, b in PAIRS:
        pe = metrics.extrinsic_error(rig, a, b, views[a], views[b], Z_NEAR, Z_FAR)
        assert pe.mean < 1e-8 and pe.skipped == 0
        assert pe.n == 23 * 54


def test_exact_depth_error(rig, board, poses, exact_views):
    views = by_camera(exact_views)
    maps = board_depth_maps(rig, board, poses)
    cache = {}
    for a, b in PAIRS:
        pe = metrics.depth_error(rig, a, b, views[a], views[b], maps, cache=cache)
        assert pe.mean < 1e-6, (a, b, pe.mean)
        assert pe.skipped == 0 and pe.invalid_views == ()


@pytest.mark.parametrize("suite", ["flat_suite", "noisy_flat_suite"])
def test_extrinsic_bounded_by_depth_error(request, flat_rig, suite):
    views, maps = request.getfixturevalue(suite)
    cache = {}
    for a, b in PAIRS:
        de = metrics.extrinsic_error(flat_rig, a, b, views[a], views[b], Z_NEAR, Z_FAR)
        dd = metrics.depth_error(flat_rig, a, b, views[a], views[b], maps, cache=cache)
        assert dd.skipped == 0
        assert np.all(de.residuals <= dd.residuals + 1e-9), (a, b)


def test_intrinsic_error_matches_naive_loop(rig, board, poses):
    noisy = synthetic.make_checkerboard_views(rig, board, poses, 0.1, seed=3)
    res = calibrate_rig(noisy, {c: rig[c].intrinsics.size for c in rig.ids})
    for cid, cal in res.cameras.items():
        i, d = cal.intrinsics, cal.distortion
        total, count = 0.0, 0
        for v in cal.views:
            pose = cal.poses[v.view_id]
            for (bx, by), (u, w) in zip(v.board_points, v.image_points):
                X = pose.R @ np.array([bx, by, 0.0]) + pose.t
                x, y = X[0] / X[2], X[1] / X[2]
                r2 = x * x + y * y
                radial = 1 + d.k1 * r2 + d.k2 * r2 ** 2 + d.k3 * r2 ** 3
                xd = x * radial + 2 * d.p1 * x * y + d.p2 * (r2 + 2 * x * x)
                yd = y * radial + d.p1 * (r2 + 2 * y * y) + 2 * d.p2 * x * y
                total += math.hypot(i.fx * xd + i.cx - u, i.fy * yd + i.cy - w)
                count += 1
        assert metrics.intrinsic_error(cal) == pytest.approx(total / count, abs=1e-12)
        assert 0.05 <= metrics.intrinsic_error(cal) <= 0.15


def test_biased_depth_hurts_wide_baseline_more(rig, board, poses, exact_views):
    views = by_camera(exact_views)
    maps = board_depth_maps(rig, board, poses, bias=0.005)
    cache = {}
    narrow = metrics.depth_error(rig, "depth", "narrow", views["depth"], views["narrow"], maps, cache=cache)
    wide = metrics.depth_error(rig, "depth", "wide", views["depth"], views["wide"], maps, cache=cache)
    assert wide.mean > narrow.mean > 0.1


# ---------------------------------------------------------------------------
# epipolar geometry details


def _axis_pair():
    intr = Intrinsics(500, 500, 320, 240, 640, 480)
    a = CameraModel("a", intr, Distortion(), RigidTransform(np.eye(3), [0, 0, 0], "depth", "a"), "")
    b = CameraModel("b", intr, Distortion(), RigidTransform(np.eye(3), [0, 0, 0.1], "depth", "b"), "")
    return a, b, RigidTransform(np.eye(3), [0, 0, 0.1], "a", "b")


def test_epipole_degeneracy_uses_point_distance():
    a, b, T = _axis_pair()
    # the principal ray of a is the baseline: every depth lands on b's epipole
    d = metrics.epipolar_distances(a, b, T, np.array([[320.0, 240.0]]), np.array([[323.0, 244.0]]), 0.3, 1.2)
    assert d[0] == pytest.approx(5.0, abs=1e-12)


def test_off_axis_corner_uses_line_distance():
    a, b, T = _axis_pair()
    # epipolar lines radiate from the epipole; (420, 240) lies on the horizontal one
    d = metrics.epipolar_distances(a, b, T, np.array([[400.0, 240.0]]), np.array([[420.0, 243.0]]), 0.3, 1.2)
    assert d[0] == pytest.approx(3.0, abs=1e-9)


def test_points_behind_measuring_camera_are_nan():
    a, _, _ = _axis_pair()
    flip = RigidTransform(np.diag([-1.0, 1.0, -1.0]), [0, 0, 0], "a", "b")
    d = metrics.epipolar_distances(a, a, flip, np.array([[300.0, 200.0]]), np.array([[300.0, 200.0]]), 0.3, 1.2)
    assert np.isnan(d[0])


def test_bad_depth_range(rig, exact_views):
    views = by_camera(exact_views)
    with pytest.raises(ValueError):
        metrics.extrinsic_error(rig, "depth", "wide", views["depth"], views["wide"], 1.0, 0.5)


def test_no_shared_views(rig, exact_views):
    views = by_camera(exact_views)
    with pytest.raises(ValueError, match="shared"):
        metrics.extrinsic_error(rig, "depth", "wide", views["depth"][:3], views["wide"][3:6], Z_NEAR, Z_FAR)


def test_mostly_missing_depth_flags_view(rig, board, poses, exact_views):
    views = by_camera(exact_views)
    maps = board_depth_maps(rig, board, poses[:2])
    dm = maps["v00"]
    # blank every depth pixel left of the board's center column
    cols = np.nonzero(dm.valid.any(axis=0))[0]
    valid = dm.valid.copy()
    valid[:, : (cols[0] + cols[-1]) // 2 + 8] = False
    maps["v00"] = DepthMap(np.where(valid, dm.depth, 0.0), dm.intrinsics, valid, dm.distortion)
    pe = metrics.depth_error(rig, "depth", "wide", views["depth"][:2], views["wide"][:2], maps)
    assert pe.invalid_views == ("v00",)
    assert pe.skipped > 27
    assert pe.n == 54


def test_missing_depth_map_raises(rig, exact_views):
    views = by_camera(exact_views)
    with pytest.raises(KeyError):
        metrics.depth_error(rig, "depth", "wide", views["depth"][:1], views["wide"][:1], {})


# ---------------------------------------------------------------------------
# report


def test_report_normalizes_by_measuring_camera():
    pe = metrics.PairError(0.55, np.array([0.55]))
    rep = metrics.ErrorReport({"ir": (640, 576), "rgb": (3840, 2160)}, {"ir": 0.2}, {("ir", "rgb"): pe})
    text = rep.format()
    assert f"0.55 ({metrics.normalize(0.55, 3840, 2160):.6g})" in text
    assert f"0.2 ({metrics.normalize(0.2, 640, 576):.6g})" in text
    assert "Depth error" not in text
