"""Calibration and registration error metrics with resolution normalization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import raycast
from .calibration import CameraCalibration, project_board
from .camera import ROI, CameraModel, CameraRig
from .mesh import DepthMap, mesh_from_depth

# the board is near-planar; the canopy angle heuristic would only punch holes in it
BOARD_MESH_ANGLE = 90.0
MAX_MISS_FRACTION = 0.5


def normalize(err, w: int, h: int):
    """Resolution-independent error: ``err * 1000 / sqrt(h * w)``."""
    if not (w > 0 and h > 0):
        raise ValueError("image size must be positive")
    return err * 1000.0 / np.sqrt(h * w)


def intrinsic_error(cal: CameraCalibration, views=None) -> float:
    """Mean distance between reprojected and detected corners over all views."""
    views = cal.views if views is None else views
    d = [
        np.linalg.norm(project_board(cal.intrinsics, cal.distortion, cal.poses[v.view_id], v.board_points)
                       - v.image_points, axis=1)
        for v in views
    ]
    return float(np.mean(np.concatenate(d)))


def _matched(view_a, view_b):
    """Index pairs of corners present in both views (by board id, else by position)."""
    if view_a.corner_ids is not None and view_b.corner_ids is not None:
        ka = {tuple(c): i for i, c in enumerate(view_a.corner_ids)}
        pairs = [(ka[tuple(c)], j) for j, c in enumerate(view_b.corner_ids) if tuple(c) in ka]
    else:
        n = min(view_a.n, view_b.n)
        pairs = [(i, i) for i in range(n)]
    if not pairs:
        return np.zeros(0, int), np.zeros(0, int)
    a, b = zip(*pairs)
    return np.array(a), np.array(b)


def _shared(views_from, views_to):
    a = {v.view_id: v for v in views_from}
    b = {v.view_id: v for v in views_to}
    return [(a[k], b[k]) for k in sorted(set(a) & set(b))]


def _ideal(cam: CameraModel, uv) -> np.ndarray:
    xn = cam.normalized(uv)
    i = cam.intrinsics
    return np.stack([i.fx * xn[..., 0] + i.cx, i.fy * xn[..., 1] + i.cy], axis=-1)


@dataclass(frozen=True, eq=False)
class PairError:
    mean: float
    residuals: np.ndarray  # per-corner distances in pixels of the measuring camera
    skipped: int = 0
    invalid_views: tuple = ()

    @property
    def n(self) -> int:
        return len(self.residuals)


def epipolar_distances(cam_from: CameraModel, cam_to: CameraModel, T, uv_from, uv_to, z_near: float,
                       z_far: float) -> np.ndarray:
    """Distance in ideal pixels of ``cam_to`` between each detected corner and the epipolar line
    of the matching corner of ``cam_from``; NaN when an epipolar point falls behind ``cam_to``."""
    xn = cam_from.normalized(uv_from)
    ray = np.concatenate([xn, np.ones(xn.shape[:-1] + (1,))], axis=-1)
    a = T.apply(ray * z_near)
    b = T.apply(ray * z_far)
    ok = (a[:, 2] > 0) & (b[:, 2] > 0)
    i = cam_to.intrinsics
    pa = cam_to.project_xyz(a, with_distortion=False).uv
    pb = cam_to.project_xyz(b, with_distortion=False).uv
    q = _ideal(cam_to, uv_to)
    d = pb - pa
    L = np.linalg.norm(d, axis=1)
    rel = q - pa
    with np.errstate(invalid="ignore", divide="ignore"):
        line = np.abs(d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0]) / L
    # both epipolar points on the epipole: the line degenerates to a point
    point = np.linalg.norm(rel, axis=1)
    out = np.where(L > 1e-12 * max(i.fx, i.fy), line, point)
    return np.where(ok, out, np.nan)


def extrinsic_error(rig: CameraRig, from_id: str, to_id: str, views_from, views_to, z_near: float,
                    z_far: float) -> PairError:
    """Mean epipolar-line distance, measured in camera ``to_id``, over all shared corners."""
    if not z_near < z_far:
        raise ValueError("z_near must be smaller than z_far")
    cf, ct = rig[from_id], rig[to_id]
    T = rig.transform(from_id, to_id)
    res = []
    skipped = 0
    pairs = _shared(views_from, views_to)
    if not pairs:
        raise ValueError(f"no shared views between {from_id} and {to_id}")
    for vf, vt in pairs:
        ia, ib = _matched(vf, vt)
        d = epipolar_distances(cf, ct, T, vf.image_points[ia], vt.image_points[ib], z_near, z_far)
        bad = np.isnan(d)
        if bad.any():
            warnings.warn(f"{int(bad.sum())} corners of view {vf.view_id} project behind camera {to_id}",
                          stacklevel=2)
            skipped += int(bad.sum())
        res.append(d[~bad])
    r = np.concatenate(res)
    return PairError(float(np.mean(r)) if len(r) else float("nan"), r, skipped)


def map_through_depth(rig: CameraRig, from_id: str, to_id: str, depth_map: DepthMap, uv_from,
                      roi: ROI | None = None, accel=None):
    """Ray-cast raw pixels of ``from_id`` onto the mesh of ``depth_map`` and project into ``to_id``.

    Returns raw ``to_id`` pixels, NaN where the ray misses the mesh.
    """
    if accel is None:
        accel = raycast.build(mesh_from_depth(depth_map, roi, BOARD_MESH_ANGLE))
    cf, ct = rig[from_id], rig[to_id]
    d = cf.rays(uv_from).xyz
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    d = d @ cf.from_depth.R
    hits = raycast.first_hits(accel, cf.origin_in_depth, d, workers=1)
    return ct.project_xyz(ct.from_depth.apply(hits.points)).uv


def depth_error(rig: CameraRig, from_id: str, to_id: str, views_from, views_to, depth_maps: dict,
                roi: ROI | None = None, cache: dict | None = None) -> PairError:
    """Mean distance in ``to_id`` between ray-cast mapped corners and detected corners.

    Corners whose ray misses the board mesh are skipped and counted; a view
    with more than half of its corners missed is flagged invalid and left out.
    ``cache`` (view id -> acceleration structure) lets several pairs share meshes.
    """
    cache = {} if cache is None else cache
    res = []
    skipped = 0
    invalid = []
    pairs = _shared(views_from, views_to)
    if not pairs:
        raise ValueError(f"no shared views between {from_id} and {to_id}")
    for vf, vt in pairs:
        if vf.view_id not in depth_maps:
            raise KeyError(f"no depth map for view {vf.view_id!r}")
        ia, ib = _matched(vf, vt)
        dm = depth_maps[vf.view_id]
        if vf.view_id not in cache:
            cache[vf.view_id] = raycast.build(mesh_from_depth(dm, roi, BOARD_MESH_ANGLE))
        uv = map_through_depth(rig, from_id, to_id, dm, vf.image_points[ia], roi, cache[vf.view_id])
        d = np.linalg.norm(uv - vt.image_points[ib], axis=1)
        miss = np.isnan(d)
        skipped += int(miss.sum())
        if miss.mean() > MAX_MISS_FRACTION:
            invalid.append(vf.view_id)
            continue
        res.append(d[~miss])
    r = np.concatenate(res) if res else np.zeros(0)
    return PairError(float(np.mean(r)) if len(r) else float("nan"), r, skipped, tuple(invalid))


@dataclass(frozen=True, eq=False)
class ErrorReport:
    sizes: dict  # camera id -> (w, h)
    intrinsic: dict = field(default_factory=dict)  # camera id -> pixels
    extrinsic: dict = field(default_factory=dict)  # (from, to) -> PairError
    depth: dict = field(default_factory=dict)  # (from, to) -> PairError

    def normalized(self, value: float, cam: str) -> float:
        w, h = self.sizes[cam]
        return normalize(value, w, h)

    def format(self) -> str:
        cams = sorted(self.sizes)
        lines = ["# Intrinsic error: mean reprojection distance, pixels (normalized)"]
        lines.append(f"{'camera':<12}{'size':>12}  {'error':>28}")
        for c in cams:
            if c in self.intrinsic:
                w, h = self.sizes[c]
                e = self.intrinsic[c]
                lines.append(f"{c:<12}{f'{w}x{h}':>12}  {f'{e:.6g} ({self.normalized(e, c):.6g})':>28}")
        for title, table in (("Extrinsic error (epipolar distance)", self.extrinsic),
                             ("Depth error (ray-cast mapping distance)", self.depth)):
            if not table:
                continue
            lines.append("")
            lines.append(f"# {title}: rows originate, columns measure; pixels (normalized)")
            lines.append(f"{'from/to':<12}" + "".join(f"  {c:>28}" for c in cams))
            for a in cams:
                cells = []
                for b in cams:
                    pe = table.get((a, b))
                    cells.append("-" if pe is None else f"{pe.mean:.6g} ({self.normalized(pe.mean, b):.6g})")
                lines.append(f"{a:<12}" + "".join(f"  {c:>28}" for c in cells))
            notes = [(k, v) for k, v in sorted(table.items()) if v.skipped or v.invalid_views]
            for (a, b), pe in notes:
                msg = f"# {a}->{b}: {pe.skipped} corners skipped"
                if pe.invalid_views:
                    msg += f", invalid views {','.join(pe.invalid_views)}"
                lines.append(msg)
        return "\n".join(lines) + "\n"
