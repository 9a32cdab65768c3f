import hashlib
import json
import re
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import rel_err
from meshreg import formats, synthetic
from meshreg.calibration import BoardSpec
from meshreg.cli import main

GOLDEN = Path(__file__).parent / "golden" / "register_small.json"
BOARD = BoardSpec(5, 7, 0.04)
SEED = 3


def small_rig():
    return synthetic.default_rig(depth_size=(160, 144), depth_f=105, satellite_size=(160, 120), satellite_f=150)


def make_inputs(d: Path, depth_noise=0.0, corner_noise=0.0, poses=8):
    d.mkdir(parents=True, exist_ok=True)
    formats.write_rig_config(d / "rig.json", synthetic.rig_config(small_rig()))
    formats.write_scene(d / "scene.json", synthetic.procedural_scene(0), board=BOARD, board_poses=poses,
                        channels={"wide": 5}, depth_noise_sigma=depth_noise, corner_noise_sigma=corner_noise)
    return d / "rig.json", d / "scene.json"


def synth(d: Path, seed=SEED, **kw):
    rig, scene = make_inputs(d, **kw)
    assert main(["synth", "--scene", str(scene), "--rig", str(rig), "--seed", str(seed), "--out", str(d / "out")]) == 0
    return d / "out"


def register_args(d: Path, out: Path, target="narrow"):
    o = d / "out"
    return ["register", "--rig", str(d / "rig.json"), "--depth", str(o / "depth.pfm"),
            "--image", f"narrow={o / 'images' / 'narrow.pfm'}", "--image", f"wide={o / 'images' / 'wide.bsq'}",
            "--image", f"depth={o / 'images' / 'depth.pfm'}", "--target", target, "--out", str(out), "--pointcloud"]


def tree_digest(root: Path) -> dict:
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("exact")
    synth(d)
    return d


@pytest.fixture(scope="module")
def registered(dataset):
    out = dataset / "reg"
    assert main(register_args(dataset, out)) == 0
    return out


# ---------------------------------------------------------------------------
# synth


def test_synth_layout(dataset):
    o = dataset / "out"
    names = set(tree_digest(o))
    assert {"depth.pfm", "corners.txt", "ground_truth.txt", "images/depth.pfm", "images/narrow.pfm",
            "images/wide.bsq", "images/wide.hdr", "board_depth/v00.pfm"} <= names
    cube, wl = formats.read_bsq(o / "images" / "wide.bsq")
    assert cube.shape == (120, 160, 5) and wl[0] == 400.0 and wl[-1] == 1000.0


def test_ground_truth_rows_match_valid_pixels(dataset):
    o = dataset / "out"
    rig = formats.read_rig_config(dataset / "rig.json").rig
    dm = formats.read_depth(o / "depth.pfm", rig.depth_camera.intrinsics)
    lines = (o / "ground_truth.txt").read_text().splitlines()
    assert lines[0].split()[:5] == ["col", "row", "x", "y", "z"]
    assert len(lines) - 1 == int(dm.valid.sum())


def test_synth_same_seed_identical_across_workers(tmp_path, monkeypatch):
    digests = []
    for w in ("1", "4", "8"):
        monkeypatch.setenv("MESHREG_WORKERS", w)
        digests.append(tree_digest(synth(tmp_path / w, depth_noise=0.002, corner_noise=0.1)))
    assert digests[0] == digests[1] == digests[2]


def test_synth_seed_changes_noise(tmp_path):
    a = tree_digest(synth(tmp_path / "a", seed=1, depth_noise=0.002, corner_noise=0.1))
    b = tree_digest(synth(tmp_path / "b", seed=2, depth_noise=0.002, corner_noise=0.1))
    assert a["depth.pfm"] != b["depth.pfm"] and a["corners.txt"] != b["corners.txt"]


def test_synth_invalid_spec(tmp_path, capsys):
    rig, _ = make_inputs(tmp_path)
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"primitives": [], "shininess": 1}))
    assert main(["synth", "--scene", str(bad), "--rig", str(rig), "--out", str(tmp_path / "o")]) == 2
    assert "shininess" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# register


def test_register_outputs(registered):
    names = set(tree_digest(registered))
    for cid in ("depth", "narrow", "wide"):
        assert {f"case_{cid}.pgm", f"valid_{cid}.pgm"} <= names
    assert {"area.pgm", "registered_narrow.pfm", "registered_wide.bsq", "pointcloud.ply"} <= names
    area = formats.read_image(registered / "area.pgm")
    assert set(np.unique(area)) <= {4, 5, 6}
    case = formats.read_image(registered / "case_wide.pgm")
    assert set(np.unique(case)) <= set(range(7))
    ply = formats.read_ply(registered / "pointcloud.ply")
    assert len(ply["x"]) == int((area == 4).sum())
    assert {"wide_0", "wide_4", "case_wide", "narrow_0"} <= set(ply)
    assert formats.read_image(registered / "registered_wide.bsq").shape == (120, 160, 5)


def test_register_self_source_is_identity(registered, dataset):
    src = formats.read_image(dataset / "out" / "images" / "narrow.pfm")
    out = formats.read_image(registered / "registered_narrow.pfm")
    valid = formats.read_image(registered / "valid_narrow.pgm") == 255
    assert valid.sum() > 1000
    np.testing.assert_allclose(out[valid], src[valid], rtol=0, atol=1e-5)


def test_register_deterministic_across_workers(dataset, registered, monkeypatch):
    ref = tree_digest(registered)
    for w in ("1", "4", "8"):
        monkeypatch.setenv("MESHREG_WORKERS", w)
        out = dataset / f"reg_w{w}"
        assert main(register_args(dataset, out)) == 0
        assert tree_digest(out) == ref


def test_register_golden(registered):
    golden = json.loads(GOLDEN.read_text())
    assert tree_digest(registered) == golden


def test_register_depth_only_writes_area_mask(dataset, tmp_path):
    o = dataset / "out"
    args = ["register", "--rig", str(dataset / "rig.json"), "--depth", str(o / "depth.pfm"), "--target", "depth",
            "--out", str(tmp_path / "r")]
    assert main(args) == 0
    assert sorted(p.name for p in (tmp_path / "r").iterdir()) == ["area.pgm"]


def test_register_unknown_camera(dataset, tmp_path, capsys):
    args = register_args(dataset, tmp_path / "r", target="lidar")
    assert main(args) == 2
    assert "lidar" in capsys.readouterr().err


def test_register_size_mismatch_names_file(dataset, tmp_path, capsys):
    wrong = tmp_path / "small.pgm"
    formats.write_image(wrong, np.zeros((10, 10), np.uint8))
    o = dataset / "out"
    args = ["register", "--rig", str(dataset / "rig.json"), "--depth", str(o / "depth.pfm"),
            "--image", f"wide={wrong}", "--target", "narrow", "--out", str(tmp_path / "r")]
    assert main(args) == 2
    assert "small.pgm" in capsys.readouterr().err


def test_register_bad_image_argument(dataset, tmp_path):
    args = ["register", "--rig", str(dataset / "rig.json"), "--depth", "x.pfm", "--image", "nofile",
            "--target", "narrow", "--out", str(tmp_path)]
    assert main(args) == 2


# ---------------------------------------------------------------------------
# calibrate


def test_calibrate_reproduces_rig(dataset, tmp_path):
    out = tmp_path / "cal.json"
    assert main(["calibrate", "--corners", str(dataset / "out" / "corners.txt"), "--board", "5x7:0.04",
                 "--out", str(out)]) == 0
    truth = formats.read_rig_config(dataset / "rig.json").rig
    got = formats.read_rig_config(out).rig
    for cid in truth.ids:
        a, b = truth[cid], got[cid]
        ia, ib = a.intrinsics, b.intrinsics
        assert rel_err([ib.fx, ib.fy, ib.cx, ib.cy], [ia.fx, ia.fy, ia.cx, ia.cy]) <= 1e-6
        np.testing.assert_allclose(b.distortion.as_array(), a.distortion.as_array(), rtol=0, atol=1e-6)
        np.testing.assert_allclose(b.from_depth.R, a.from_depth.R, rtol=0, atol=1e-6)
        np.testing.assert_allclose(b.from_depth.t, a.from_depth.t, rtol=0, atol=1e-6)
        assert b.modality == a.modality
    report = (tmp_path / "cal.report.txt").read_text()
    assert "Intrinsic error" in report and "Extrinsic error" in report


def write_corner_subset(src: Path, dst: Path, keep):
    lines = src.read_text().splitlines()
    row = re.compile(r"^v\d")
    body = [ln for ln in lines if row.match(ln) and keep(ln.split())]
    head = [ln for ln in lines if not row.match(ln)]
    dst.write_text("\n".join(head + body) + "\n")


def test_calibrate_missing_shared_views_names_pair(dataset, tmp_path, capsys):
    # wide sees only the first four boards, narrow only the last four
    def keep(tok):
        n = int(tok[0][1:])
        return tok[1] == "depth" or (tok[1] == "wide" and n < 4) or (tok[1] == "narrow" and n >= 4)

    p = tmp_path / "c.txt"
    write_corner_subset(dataset / "out" / "corners.txt", p, keep)
    assert main(["calibrate", "--corners", str(p), "--board", "5x7:0.04", "--out", str(tmp_path / "r.json")]) == 2
    err = capsys.readouterr().err
    assert "narrow" in err and "wide" in err


def test_calibrate_malformed_line_number(dataset, tmp_path, capsys):
    lines = (dataset / "out" / "corners.txt").read_text().splitlines()
    bad = 9
    lines[bad - 1] = lines[bad - 1].rsplit(" ", 1)[0] + " 12.x"
    p = tmp_path / "c.txt"
    p.write_text("\n".join(lines) + "\n")
    assert main(["calibrate", "--corners", str(p), "--board", "5x7:0.04", "--out", str(tmp_path / "r.json")]) == 2
    assert f"c.txt:{bad}:" in capsys.readouterr().err


def test_calibrate_frontal_boards_is_numeric_failure(tmp_path, capsys):
    rig = small_rig()
    poses = synthetic.frontal_board_poses(rig, BOARD, 5)
    views = synthetic.make_checkerboard_views(rig, BOARD, poses)
    p = tmp_path / "c.txt"
    formats.write_corners(p, BOARD, views, {c: (rig[c].width, rig[c].height, "") for c in rig.ids})
    assert main(["calibrate", "--corners", str(p), "--board", "5x7:0.04", "--out", str(tmp_path / "r.json")]) == 3
    assert "numeric failure" in capsys.readouterr().err


def test_calibrate_board_argument():
    assert main(["calibrate", "--corners", "x", "--board", "5by7", "--out", "y"]) == 2


# ---------------------------------------------------------------------------
# evaluate


def evaluate(d: Path, out: Path, depth=True):
    args = ["evaluate", "--rig", str(d / "rig.json"), "--corners", str(d / "out" / "corners.txt"),
            "--out", str(out / "report.txt"), "--residuals", str(out / "res.txt")]
    if depth:
        args += ["--depth-dir", str(d / "out" / "board_depth")]
    code = main(args)
    return code, out / "report.txt", out / "res.txt"


def residual_means(path: Path) -> dict:
    acc = {}
    for line in path.read_text().splitlines()[1:]:
        kind, a, b, *_, r = line.split()
        acc.setdefault((kind, a, b), []).append(float(r))
    return {k: float(np.mean(v)) for k, v in acc.items()}


CELL = re.compile(r"(\S+) \((\S+)\)")


def report_tables(text: str) -> dict:
    tables, title, cols = {}, None, None
    for line in text.splitlines():
        if line.startswith("# ") and ":" in line:
            title = line[2:].split(" ", 1)[0]
            cols = None
        elif line.startswith("from/to"):
            cols = line.split()[1:]
        elif cols and line and not line.startswith("#"):
            row = line.split()[0]
            cells = CELL.findall(line)
            others = [c for c in cols if c != row]
            for c, (raw, norm) in zip(others, cells):
                tables[(title, row, c)] = (float(raw), float(norm))
    return tables


@pytest.fixture(scope="module")
def exact_report(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    code, rep, res = evaluate(dataset, out)
    assert code == 0
    return rep.read_text(), res


def test_evaluate_exact_data_entries_below_1e6(exact_report):
    text, _ = exact_report
    tables = report_tables(text)
    assert any(k[0] == "Depth" for k in tables)
    bad = {k: v[0] for k, v in tables.items() if not v[0] < 1e-6}
    assert not bad


def test_evaluate_exact_epipolar_and_intrinsic(exact_report):
    _, res = exact_report
    means = residual_means(res)
    assert all(v < 1e-8 for k, v in means.items() if k[0] in ("intrinsic", "extrinsic"))


def test_evaluate_normalization_column(exact_report, dataset):
    text, res = exact_report
    rig = formats.read_rig_config(dataset / "rig.json").rig
    means = residual_means(res)
    tables = report_tables(text)
    names = {"Extrinsic": "extrinsic", "Depth": "depth"}
    for (title, a, b), (raw, norm) in tables.items():
        mean = means[(names[title], a, b)]
        w, h = rig[b].intrinsics.size
        assert raw == pytest.approx(mean, rel=1e-5)
        assert norm == pytest.approx(mean * 1000 / np.sqrt(w * h), rel=1e-5)


def test_evaluate_wide_baseline_row_larger_under_depth_noise(tmp_path):
    d = tmp_path / "noisy"
    synth(d, depth_noise=0.01)
    code, _, res = evaluate(d, tmp_path)
    assert code == 0
    m = residual_means(res)
    assert m[("depth", "depth", "wide")] > m[("depth", "depth", "narrow")]


def test_evaluate_missing_depth_file(dataset, tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    args = ["evaluate", "--rig", str(dataset / "rig.json"), "--corners", str(dataset / "out" / "corners.txt"),
            "--depth-dir", str(empty), "--out", str(tmp_path / "r.txt")]
    assert main(args) == 2
    assert "v00" in capsys.readouterr().err


def test_evaluate_without_depth_has_no_depth_table(dataset, tmp_path):
    code, rep, _ = evaluate(dataset, tmp_path, depth=False)
    assert code == 0
    assert "Depth error" not in rep.read_text()


# ---------------------------------------------------------------------------
# entry points


def test_usage_errors():
    assert main([]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["register", "--rig", "r.json"]) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "meshreg", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("calibrate", "register", "evaluate", "synth"):
        assert cmd in r.stdout
    r = subprocess.run([sys.executable, "-m", "meshreg", "register", "--rig", str(tmp_path / "missing.json"),
                        "--depth", "d.pfm", "--target", "depth", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2 and "missing.json" in r.stderr

