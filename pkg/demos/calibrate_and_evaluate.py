"""Calibrate a synthetic three-camera rig from noisy corners and print the error tables.

    python3 demos/calibrate_and_evaluate.py --corner-noise 0.1 --depth-noise 0.005
"""

import argparse
import itertools

from meshreg import metrics, synthetic
from meshreg.calibration import BoardSpec, calibrate_rig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--poses", type=int, default=23)
    ap.add_argument("--corner-noise", type=float, default=0.1, help="pixels")
    ap.add_argument("--depth-noise", type=float, default=0.005, help="metres")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    truth = synthetic.default_rig()
    board = BoardSpec(6, 9, 0.03)
    poses = synthetic.random_board_poses(truth, board, a.poses, seed=a.seed)
    views = synthetic.make_checkerboard_views(truth, board, poses, a.corner_noise, seed=a.seed + 1)
    sizes = {c: truth[c].intrinsics.size for c in truth.ids}

    result = calibrate_rig(views, sizes)
    rig = result.to_rig("depth")
    for c in rig.ids:
        got, want = rig[c].intrinsics, truth[c].intrinsics
        print(f"{c:>6}: fx {got.fx:.3f} (true {want.fx:.3f})  cx {got.cx:.3f} (true {want.cx:.3f})")

    maps = {f"v{i:02d}": synthetic.board_depth_map(truth, board, p, noise_sigma=a.depth_noise, seed=a.seed + 100 + i)
            for i, p in enumerate(poses)}
    by_cam = {c: [v for v in views if v.camera_id == c] for c in rig.ids}
    report = metrics.ErrorReport(sizes)
    for c in rig.ids:
        report.intrinsic[c] = metrics.intrinsic_error(result.cameras[c])
    cache = {}
    for x, y in itertools.permutations(rig.ids, 2):
        report.extrinsic[(x, y)] = metrics.extrinsic_error(rig, x, y, by_cam[x], by_cam[y], 0.3, 1.2)
        report.depth[(x, y)] = metrics.depth_error(rig, x, y, by_cam[x], by_cam[y], maps, cache=cache)
    print()
    print(report.format())


if __name__ == "__main__":
    main()
