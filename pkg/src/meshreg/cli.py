"""Command-line entry point: ``meshreg calibrate | register | evaluate | synth``.

Exit codes: 0 success, 2 input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import io
import itertools
import sys
from pathlib import Path

import numpy as np

from . import formats, metrics, registration, synthetic
from .calibration import BoardSpec, calibrate_rig, estimate_board_pose, project_board
from .camera import ROI, RigConfig
from .errors import ConfigError, EstimationError, FormatError, InsufficientDataError, NumericError, OptimizationError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
DEFAULT_ROI = (-1.0, 1.0, -1.0, 1.0, 0.3, 1.2)


class UsageError(Exception):
    pass


def _board(text: str) -> BoardSpec:
    try:
        dims, size = text.split(":")
        r, c = dims.lower().split("x")
        return BoardSpec(int(r), int(c), float(size))
    except ValueError:
        raise argparse.ArgumentTypeError(f"board must look like ROWSxCOLS:SIZE, got {text!r}") from None


def _camera(text: str):
    try:
        parts = text.split(":")
        w, h = parts[1].lower().split("x")
        return parts[0], (int(w), int(h), parts[2] if len(parts) > 2 else "")
    except (ValueError, IndexError):
        raise argparse.ArgumentTypeError(f"camera must look like ID:WxH[:MODALITY], got {text!r}") from None


def _roi(text: str) -> ROI:
    try:
        vals = [float(x) for x in text.split(",")]
        if len(vals) != 6:
            raise ValueError
        return ROI(*vals)
    except ValueError:
        raise argparse.ArgumentTypeError("roi must be xmin,xmax,ymin,ymax,zmin,zmax with min < max") from None


def _image_arg(text: str):
    cam, sep, path = text.partition("=")
    if not sep or not cam or not path:
        raise argparse.ArgumentTypeError(f"image must look like CAM=FILE, got {text!r}")
    return cam, path


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="meshreg", description="Depth-mesh ray-cast registration of multi-camera images.")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("calibrate", help="calibrate intrinsics and extrinsics from corner files")
    c.add_argument("--corners", nargs="+", required=True, metavar="FILE")
    c.add_argument("--board", type=_board, required=True, metavar="RxC:SIZE")
    c.add_argument("--out", required=True, metavar="RIG")
    c.add_argument("--camera", type=_camera, action="append", default=[], metavar="ID:WxH[:MOD]",
                   help="image size (and modality) of a camera not declared in the corner files")
    c.add_argument("--depth-camera", default=None, metavar="ID")
    c.add_argument("--roi", type=_roi, default=None, metavar="X0,X1,Y0,Y1,Z0,Z1")
    c.add_argument("--ground-z", type=float, default=None)
    c.add_argument("--angle-threshold", type=float, default=15.0)

    r = sub.add_parser("register", help="register source images into a target camera")
    r.add_argument("--rig", required=True)
    r.add_argument("--depth", required=True)
    r.add_argument("--image", type=_image_arg, action="append", default=[], metavar="CAM=FILE")
    r.add_argument("--target", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--interp", choices=("bilinear", "nearest"), default="bilinear")
    r.add_argument("--pointcloud", action="store_true")
    r.add_argument("--ascii", action="store_true", help="write the point cloud as ASCII PLY")
    r.add_argument("--include-occluded", action="store_true", help="also fill occluded (P2) pixels")

    e = sub.add_parser("evaluate", help="intrinsic, epipolar and depth error report")
    e.add_argument("--rig", required=True)
    e.add_argument("--corners", nargs="+", required=True)
    e.add_argument("--depth-dir", default=None)
    e.add_argument("--out", required=True)
    e.add_argument("--residuals", default=None, help="optional per-corner residual dump")

    s = sub.add_parser("synth", help="render a synthetic dataset")
    s.add_argument("--scene", required=True)
    s.add_argument("--rig", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    return p


# ---------------------------------------------------------------------------


def cmd_calibrate(a) -> int:
    board, views, cameras = formats.read_corners(a.corners, a.board)
    for cid, spec in a.camera:
        cameras[cid] = spec
    sizes = {cid: (w, h) for cid, (w, h, _) in cameras.items()}
    ids = sorted({v.camera_id for v in views})
    missing = [c for c in ids if c not in sizes]
    if missing:
        raise UsageError(f"image size unknown for camera(s) {', '.join(missing)}; pass --camera ID:WxH")
    depth_id = a.depth_camera or ("depth" if "depth" in ids else None)
    if depth_id is None or depth_id not in ids:
        raise UsageError("depth camera not found among the corner files; pass --depth-camera")
    for x, y in itertools.combinations(ids, 2):
        vx = {v.view_id for v in views if v.camera_id == x}
        vy = {v.view_id for v in views if v.camera_id == y}
        if not vx & vy:
            raise InsufficientDataError(f"no shared views between cameras {x} and {y}")
    result = calibrate_rig(views, sizes)
    rig = result.to_rig(depth_id, {c: cameras[c][2] for c in ids})
    roi = a.roi or ROI(*DEFAULT_ROI)
    cfg = RigConfig(rig, roi, a.ground_z, a.angle_threshold)
    formats.write_rig_config(a.out, cfg)
    report = metrics.ErrorReport({c: sizes[c] for c in ids})
    for c in ids:
        report.intrinsic[c] = result.cameras[c].mean_error
    by_cam = {c: [v for v in views if v.camera_id == c] for c in ids}
    for x, y in itertools.permutations(ids, 2):
        report.extrinsic[(x, y)] = metrics.extrinsic_error(rig, x, y, by_cam[x], by_cam[y], roi.z_min, roi.z_max)
    out = Path(a.out)
    formats.atomic_write_text(out.with_name(out.stem + ".report.txt"), report.format())
    return EXIT_OK


def _check_size(path, img, cam):
    if img.shape[:2] != (cam.height, cam.width):
        raise FormatError(f"{path}: image is {img.shape[1]}x{img.shape[0]}, camera {cam.id} expects "
                          f"{cam.width}x{cam.height}")


def cmd_register(a) -> int:
    cfg = formats.read_rig_config(a.rig)
    rig = cfg.rig
    for cid in [a.target] + [c for c, _ in a.image]:
        if cid not in rig:
            raise UsageError(f"unknown camera id {cid!r}")
    dm = formats.read_depth(a.depth, rig.depth_camera.intrinsics, rig.depth_camera.distortion)
    images = {}
    suffix = {}
    for cid, path in a.image:
        img = formats.read_image(path)
        _check_size(path, img, rig[cid])
        images[cid] = img
        suffix[cid] = Path(path).suffix.lower()
    res = registration.register_all(cfg, a.target, dm, images, a.interp, a.include_occluded)
    out = Path(a.out)
    formats.write_mask(out / "area.pgm", res.area_mask)
    for cid in sorted(images):
        reg = res.images[cid]
        formats.write_image(out / f"registered_{cid}{suffix[cid]}", reg.data)
        formats.write_mask(out / f"valid_{cid}.pgm", reg.valid.astype(np.uint8) * 255)
        formats.write_mask(out / f"case_{cid}.pgm", res.case_masks[cid])
    if a.pointcloud:
        formats.write_point_cloud(out / "pointcloud.ply", res.point_cloud, binary=not a.ascii)
    return EXIT_OK


def cmd_evaluate(a) -> int:
    cfg = formats.read_rig_config(a.rig)
    rig = cfg.rig
    board, views, _ = formats.read_corners(a.corners)
    ids = [c for c in rig.ids if any(v.camera_id == c for v in views)]
    unknown = sorted({v.camera_id for v in views} - set(rig.ids))
    if unknown:
        raise UsageError(f"corner files reference unknown camera(s) {', '.join(unknown)}")
    by_cam = {c: [v for v in views if v.camera_id == c] for c in ids}
    report = metrics.ErrorReport({c: rig[c].intrinsics.size for c in ids})
    lines = ["kind from to view row col residual"]
    for c in ids:
        cam = rig[c]
        d = []
        for v in by_cam[c]:
            pose = estimate_board_pose(v, cam.intrinsics, cam.distortion)
            r = np.linalg.norm(project_board(cam.intrinsics, cam.distortion, pose, v.board_points) - v.image_points,
                               axis=1)
            d.append(r)
            lines += [f"intrinsic {c} {c} {v.view_id} {int(i)} {int(j)} {x:.17g}" for (i, j), x in zip(v.corner_ids, r)]
        report.intrinsic[c] = float(np.mean(np.concatenate(d)))
    depth_maps, accels = None, {}
    if a.depth_dir is not None:
        depth_maps = {}
        for vid in sorted({v.view_id for v in views}):
            try:
                path = formats.depth_path_for_view(a.depth_dir, vid)
            except FileNotFoundError as e:
                raise UsageError(str(e)) from None
            depth_maps[vid] = formats.read_depth(path, rig.depth_camera.intrinsics, rig.depth_camera.distortion)
    for x, y in itertools.permutations(ids, 2):
        shared = {v.view_id for v in by_cam[x]} & {v.view_id for v in by_cam[y]}
        if not shared:
            continue
        pe = metrics.extrinsic_error(rig, x, y, by_cam[x], by_cam[y], cfg.roi.z_min, cfg.roi.z_max)
        report.extrinsic[(x, y)] = pe
        lines += [f"extrinsic {x} {y} - - - {r:.17g}" for r in pe.residuals]
        if depth_maps is not None:
            pd = metrics.depth_error(rig, x, y, by_cam[x], by_cam[y], depth_maps, cache=accels)
            report.depth[(x, y)] = pd
            lines += [f"depth {x} {y} - - - {r:.17g}" for r in pd.residuals]
    formats.atomic_write_text(a.out, report.format())
    if a.residuals:
        formats.atomic_write_text(a.residuals, "\n".join(lines) + "\n")
    return EXIT_OK


def _channels_for(cam, opts) -> int:
    if cam.id in opts["channels"]:
        return opts["channels"][cam.id]
    return 3 if cam.modality == "rgb" else 1


def cmd_synth(a) -> int:
    scene, opts = formats.read_scene(a.scene)
    cfg = formats.read_rig_config(a.rig)
    rig = cfg.rig
    out = Path(a.out)
    dcam = rig.depth_camera
    dm = synthetic.render_depth(scene, dcam, opts["depth_noise_sigma"], opts["flying_pixels"], seed=a.seed)
    formats.write_depth(out / "depth.pfm", dm.depth, dm.valid)
    for cid in rig.ids:
        cam = rig[cid]
        k = _channels_for(cam, opts)
        img = synthetic.render_modality(scene, cam, k)
        if k == 3:
            formats.write_image(out / "images" / f"{cid}.ppm", synthetic.to_uint8(img))
        elif k == 1:
            formats.write_image(out / "images" / f"{cid}.pfm", img)
        else:
            formats.write_image(out / "images" / f"{cid}.bsq", img, wavelengths=np.linspace(400.0, 1000.0, k))
    board = opts["board"] or BoardSpec(6, 9, 0.03)
    poses = synthetic.random_board_poses(rig, board, opts["board_poses"], seed=a.seed + 2)
    views = synthetic.make_checkerboard_views(rig, board, poses, opts["corner_noise_sigma"], seed=a.seed + 1)
    cams = {c: (rig[c].width, rig[c].height, rig[c].modality) for c in rig.ids}
    formats.write_corners(out / "corners.txt", board, views, cams)
    for i, pose in enumerate(poses):
        bdm = synthetic.board_depth_map(rig, board, pose, opts["depth_noise_sigma"], seed=a.seed + 100 + i)
        formats.write_depth(out / "board_depth" / f"v{i:02d}.pfm", bdm.depth, bdm.valid)
    _write_ground_truth(out / "ground_truth.txt", scene, rig, dm)
    return EXIT_OK


def _write_ground_truth(path, scene, rig, dm) -> None:
    """One row per valid depth pixel: true point, then true pixel and visibility in every camera."""
    gt = synthetic.ground_truth(scene, rig, rig.depth_camera_id, occluded_volume=False)
    rows, cols = np.nonzero(dm.valid)
    head = ["col", "row", "x", "y", "z"]
    cols_out = [cols, rows, *gt.points[rows, cols].T]
    fmt = ["%d", "%d", "%.17g", "%.17g", "%.17g"]
    for c in rig.ids:
        s = gt.sources[c]
        head += [f"u_{c}", f"v_{c}", f"visible_{c}"]
        cols_out += [*s.pixels[rows, cols].T, (s.visible & s.in_bounds)[rows, cols]]
        fmt += ["%.17g", "%.17g", "%d"]
    buf = io.StringIO()
    np.savetxt(buf, np.column_stack(cols_out), fmt=fmt, header=" ".join(head), comments="")
    formats.atomic_write_text(path, buf.getvalue())


COMMANDS = {"calibrate": cmd_calibrate, "register": cmd_register, "evaluate": cmd_evaluate, "synth": cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        return COMMANDS[a.command](a)
    except (UsageError, InsufficientDataError, FormatError, ConfigError, FileNotFoundError, KeyError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"meshreg {a.command}: error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except (EstimationError, OptimizationError, NumericError) as e:
        print(f"meshreg {a.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"meshreg {a.command}: error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
