import json
import os
import stat
import tempfile
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp
from scipy.spatial.transform import Rotation

from meshreg import formats, synthetic
from meshreg.calibration import BoardSpec, CalibrationView
from meshreg.camera import ROI, CameraModel, CameraRig, RigConfig
from meshreg.errors import ConfigError, FormatError
from meshreg.geometry import Distortion, Intrinsics, RigidTransform
from meshreg.registration import MultimodalPointCloud

shapes2 = hnp.array_shapes(min_dims=2, max_dims=2, min_side=1, max_side=12)


def rgb_shapes():
    return st.tuples(st.integers(1, 12), st.integers(1, 12), st.just(3))


def tmpdir():
    return tempfile.TemporaryDirectory()


# ---------------------------------------------------------------------------
# raster formats


@settings(max_examples=60)
@given(img=st.one_of(
    hnp.arrays(np.uint8, st.one_of(shapes2, rgb_shapes())),
    hnp.arrays(np.uint16, st.one_of(shapes2, rgb_shapes())),
))
def test_pnm_round_trip(img):
    out = formats.decode_pnm(formats.encode_pnm(img))
    assert out.dtype == img.dtype
    np.testing.assert_array_equal(out, img)


@settings(max_examples=60)
@given(img=hnp.arrays(np.float32, st.one_of(shapes2, rgb_shapes())))
def test_pfm_round_trip_bit_exact(img):
    out = formats.decode_pfm(formats.encode_pfm(img))
    assert out.shape == img.shape
    assert out.tobytes() == img.tobytes()


def test_pfm_big_endian_read():
    img = np.arange(6, dtype=np.float32).reshape(2, 3)
    data = b"Pf\n3 2\n1.0\n" + img[::-1].astype(">f4").tobytes()
    np.testing.assert_array_equal(formats.decode_pfm(data), img)


def test_pnm_header_comments():
    data = b"P5\n# made by hand\n2 1\n255\n\x07\x09"
    np.testing.assert_array_equal(formats.decode_pnm(data), [[7, 9]])


@pytest.mark.parametrize("data", [b"P2\n1 1\n255\n0", b"P5\n4 4\n255\n\x00", b"P5\n1"])
def test_pnm_rejects_bad_input(data):
    with pytest.raises(FormatError):
        formats.decode_pnm(data, "x.pgm")


@settings(max_examples=25, deadline=None)
@given(cube=hnp.arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 8))),
       base=st.floats(300, 500))
def test_bsq_round_trip(cube, base):
    wl = [base + 2.5 * k for k in range(cube.shape[2])]
    with tmpdir() as d:
        p = Path(d) / "cube.bsq"
        formats.write_bsq(p, cube, wl)
        out, wl2 = formats.read_bsq(p)
    assert out.tobytes() == cube.tobytes() and out.shape == cube.shape
    assert wl2 == wl


def test_bsq_size_mismatch(tmp_path):
    p = tmp_path / "c.bsq"
    formats.write_bsq(p, np.zeros((2, 2, 3), np.float32))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FormatError, match="expected 48 bytes"):
        formats.read_bsq(p)


@settings(max_examples=30, deadline=None)
@given(mm=hnp.arrays(np.uint16, shapes2))
def test_depth_pgm_round_trip(mm):
    h, w = mm.shape
    intr = Intrinsics(100, 100, w / 2, h / 2, w, h)
    with tmpdir() as d:
        p = Path(d) / "d.pgm"
        formats.write_depth(p, mm / 1000.0, mm > 0)
        dm = formats.read_depth(p, intr)
        raw = formats.decode_pnm(p.read_bytes())
    np.testing.assert_array_equal(raw, mm)
    np.testing.assert_array_equal(dm.valid, mm > 0)


def test_depth_size_mismatch_names_file(tmp_path):
    p = tmp_path / "depth.pfm"
    formats.write_depth(p, np.ones((4, 5)))
    with pytest.raises(FormatError, match="depth.pfm"):
        formats.read_depth(p, Intrinsics(10, 10, 3, 3, 6, 6))


# ---------------------------------------------------------------------------
# PLY

finite32 = st.floats(-1e6, 1e6, width=32)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(0, 30), k=st.integers(0, 3), binary=st.booleans(), data=st.data())
def test_ply_round_trip(n, k, binary, data):
    xyz = data.draw(hnp.arrays(np.float32, (n, 3), elements=finite32))
    vals = data.draw(hnp.arrays(np.float32, (n, k), elements=finite32))
    cases = data.draw(hnp.arrays(np.uint8, n))
    cloud = MultimodalPointCloud(xyz.astype(float), np.zeros((n, 2), int), {"cam": vals.astype(float)},
                                 {"cam": cases})
    with tmpdir() as d:
        p = Path(d) / "pc.ply"
        formats.write_point_cloud(p, cloud, binary)
        out = formats.read_ply(p)
    for j, c in enumerate("xyz"):
        assert out[c].tobytes() == xyz[:, j].tobytes()
    for j in range(k):
        assert out[f"cam_{j}"].tobytes() == vals[:, j].tobytes()
    np.testing.assert_array_equal(out["case_cam"], cases)


@pytest.mark.parametrize("binary", [True, False])
def test_ply_mesh_faces(tmp_path, binary):
    from meshreg.mesh import TriangleMesh

    mesh = TriangleMesh(np.eye(3), np.array([[0, 1, 2]]))
    formats.write_mesh(tmp_path / "m.ply", mesh, binary)
    out = formats.read_ply(tmp_path / "m.ply")
    np.testing.assert_array_equal(out["faces"], [[0, 1, 2]])


@pytest.mark.parametrize("binary", [True, False])
def test_ply_count_mismatch(tmp_path, binary):
    p = tmp_path / "pc.ply"
    formats.write_ply(p, [("x", np.arange(5.0), "float")], binary)
    data = p.read_bytes().replace(b"element vertex 5", b"element vertex 9")
    p.write_bytes(data)
    with pytest.raises(FormatError):
        formats.read_ply(p)


# ---------------------------------------------------------------------------
# rig configs

radial = st.floats(-0.05, 0.05)
tangential = st.floats(-0.005, 0.005)


@st.composite
def rig_configs(draw):
    n = draw(st.integers(1, 4))
    ids = ["depth"] + [f"cam{i}" for i in range(1, n)]
    cams = {}
    for cid in ids:
        w, h = draw(st.integers(8, 4000)), draw(st.integers(8, 4000))
        intr = Intrinsics(draw(st.floats(50, 5000)), draw(st.floats(50, 5000)),
                          draw(st.floats(0, w, exclude_max=True)), draw(st.floats(0, h, exclude_max=True)), w, h)
        dist = Distortion(draw(radial), draw(radial), draw(radial), draw(tangential), draw(tangential))
        # rig files only hold models that undistort on the unit disk
        try:
            dist.check_invertible()
        except ArithmeticError:
            assume(False)
        if cid == "depth":
            T = RigidTransform.identity("depth")
            T = RigidTransform(T.R, T.t, "depth", "depth")
        else:
            R = Rotation.from_rotvec(draw(hnp.arrays(float, 3, elements=st.floats(-1, 1)))).as_matrix()
            T = RigidTransform(R, draw(hnp.arrays(float, 3, elements=st.floats(-2, 2))), "depth", cid)
        cams[cid] = CameraModel(cid, intr, dist, T, draw(st.sampled_from(["ir", "rgb", "thermal", ""])))
    z0 = draw(st.floats(0.1, 1.0))
    roi = ROI(-1.0, draw(st.floats(0.1, 2)), -0.5, 0.5, z0, z0 + draw(st.floats(0.1, 2)))
    return RigConfig(CameraRig(cams, "depth"), roi, draw(st.none() | st.floats(1.0, 3.0)),
                     draw(st.floats(1, 89)))


@settings(max_examples=40, deadline=None)
@given(cfg=rig_configs())
def test_rig_config_round_trip(cfg):
    doc = formats.rig_config_to_dict(cfg)
    back = formats.rig_config_from_dict(json.loads(json.dumps(doc)))
    assert formats.rig_config_to_dict(back) == doc
    for cid in cfg.rig.ids:
        a, b = cfg.rig[cid], back.rig[cid]
        assert a.intrinsics == b.intrinsics and a.distortion == b.distortion
        assert a.from_depth.R.tobytes() == b.from_depth.R.tobytes()
        assert a.from_depth.t.tobytes() == b.from_depth.t.tobytes()


def test_rig_file_round_trip(tmp_path, rig):
    cfg = synthetic.rig_config(rig)
    formats.write_rig_config(tmp_path / "rig.json", cfg)
    back = formats.read_rig_config(tmp_path / "rig.json")
    assert formats.rig_config_to_dict(back) == formats.rig_config_to_dict(cfg)


@pytest.mark.parametrize("where", ["top", "camera", "roi"])
def test_rig_config_rejects_unknown_keys(rig, where):
    doc = formats.rig_config_to_dict(synthetic.rig_config(rig))
    target = {"top": doc, "camera": doc["cameras"][1], "roi": doc["roi"]}[where]
    target["colour"] = 1
    with pytest.raises(ConfigError, match="colour"):
        formats.rig_config_from_dict(doc)


def test_rig_config_missing_key(rig):
    doc = formats.rig_config_to_dict(synthetic.rig_config(rig))
    del doc["cameras"][0]["fx"]
    with pytest.raises(ConfigError, match="fx"):
        formats.rig_config_from_dict(doc)


def test_rig_config_invalid_json(tmp_path):
    (tmp_path / "r.json").write_text("{not json")
    with pytest.raises(ConfigError):
        formats.read_rig_config(tmp_path / "r.json")


# ---------------------------------------------------------------------------
# corner files


@settings(max_examples=30, deadline=None)
@given(rows=st.integers(2, 7), cols=st.integers(2, 7), square=st.floats(0.005, 0.1), data=st.data())
def test_corner_file_round_trip(rows, cols, square, data):
    board = BoardSpec(rows, cols, square)
    rc, _ = board.grid()
    views = []
    for vid in ("a", "b"):
        for cid in ("depth", "rgb"):
            keep = data.draw(st.lists(st.sampled_from(range(len(rc))), min_size=4, max_size=len(rc), unique=True))
            ids = rc[sorted(keep)]
            uv = data.draw(hnp.arrays(float, (len(ids), 2), elements=st.floats(-1e4, 1e4)))
            views.append(CalibrationView.from_grid(board, cid, vid, ids, uv))
    cams = {"depth": (640, 576, "ir"), "rgb": (320, 240, "")}
    with tmpdir() as d:
        p = Path(d) / "corners.txt"
        formats.write_corners(p, board, views, cams)
        b2, v2, c2 = formats.read_corners(p)
    assert b2 == board and c2 == cams
    key = {(v.camera_id, v.view_id): v for v in views}
    assert len(v2) == len(views)
    for v in v2:
        ref = key[(v.camera_id, v.view_id)]
        np.testing.assert_array_equal(v.corner_ids, ref.corner_ids)
        assert v.image_points.tobytes() == ref.image_points.tobytes()


def test_malformed_corner_line_reports_line_number(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("board 2 2 0.03\n" + formats.CORNER_HEADER + "\nv0 cam 0 0 1.0 2.0\nv0 cam 0 1 oops 2.0\n")
    with pytest.raises(FormatError, match=r"c\.txt:4:"):
        formats.read_corners(p)


def test_corner_outside_board(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("board 2 2 0.03\n" + formats.CORNER_HEADER + "\nv0 cam 0 5 1.0 2.0\n")
    with pytest.raises(FormatError, match=r":3:.*outside"):
        formats.read_corners(p)


# ---------------------------------------------------------------------------
# scene specs


def test_scene_round_trip(tmp_path, rig):
    scene = synthetic.procedural_scene(seed=4)
    opts = {"depth_noise_sigma": 0.002, "flying_pixels": True, "board": BoardSpec(6, 9, 0.03), "board_poses": 5,
            "corner_noise_sigma": 0.1, "channels": {"wide": 7}}
    formats.write_scene(tmp_path / "s.json", scene, **opts)
    s2, o2 = formats.read_scene(tmp_path / "s.json")
    assert formats.scene_to_dict(s2, **o2) == formats.scene_to_dict(scene, **opts)
    assert o2 == opts


def test_scene_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="colour"):
        formats.scene_from_dict({"primitives": [{"kind": "sphere", "center": [0, 0, 1], "radius": 0.1,
                                                 "colour": 3}]})


def test_scene_rejects_bad_primitive():
    with pytest.raises(ConfigError):
        formats.scene_from_dict({"primitives": [{"kind": "torus", "center": [0, 0, 1]}]})


# ---------------------------------------------------------------------------
# atomic writes


def test_atomic_write_leaves_no_temp_and_honours_umask(tmp_path):
    old = os.umask(0o027)
    try:
        formats.atomic_write(tmp_path / "sub" / "f.bin", b"abc")
    finally:
        os.umask(old)
    assert os.listdir(tmp_path / "sub") == ["f.bin"]
    assert stat.S_IMODE(os.stat(tmp_path / "sub" / "f.bin").st_mode) == 0o640


def test_atomic_write_keeps_old_file_on_failure(tmp_path):
    p = tmp_path / "img.pgm"
    formats.write_image(p, np.zeros((2, 2), np.uint8))
    before = p.read_bytes()
    with pytest.raises(ValueError):
        formats.write_image(p, np.zeros((2, 2), np.float64))
    assert p.read_bytes() == before
    assert os.listdir(tmp_path) == ["img.pgm"]
