"""Per-pixel correspondence by ray casting, projection-case classification and resampling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import raycast
from .camera import CameraModel, CameraRig, RigConfig
from .mesh import DepthMap, TriangleMesh, build_uncertainty_mesh, mesh_from_depth
from .raycast import SELF_HIT_EPS, AccelStructure, HitBatch

# case-mask codes
UNMAPPED, P1, P2, P3_1, P3_2 = 0, 1, 2, 3, 4
P4, P5, P6 = 4, 5, 6  # area codes; P4 shares its value with P3_2 but lives in the separate area mask
CASE_CODES = {"unmapped": UNMAPPED, "P1": P1, "P2": P2, "P3_1": P3_1, "P3_2": P3_2, "P5": P5, "P6": P6}
AREA_CODES = {"P4": P4, "P5": P5, "P6": P6}


@dataclass(frozen=True, eq=False)
class TargetRayField:
    target_id: str
    origin: np.ndarray  # target optical center, depth-camera frame
    directions: np.ndarray  # (H, W, 3) unit ray directions, depth-camera frame
    object_hits: HitBatch
    uncertainty_hits: HitBatch
    area: np.ndarray  # (H, W) codes P4 / P5 / P6

    @property
    def shape(self):
        return self.area.shape

    @property
    def object_mask(self) -> np.ndarray:
        return self.area == P4

    @property
    def provisional_p31(self) -> np.ndarray:
        """Pixels hitting the curtain first but still reaching the object mesh behind it."""
        return (self.area == P5) & self.object_hits.hit


@dataclass(frozen=True, eq=False)
class CorrespondenceMap:
    source_id: str
    source_pixels: np.ndarray  # (H, W, 2) raw source coordinates, NaN where unmapped
    points: np.ndarray  # (H, W, 3) object-mesh hit in the depth-camera frame, NaN without a hit
    cases: np.ndarray  # (H, W) uint8 case-mask codes

    @property
    def mapped(self) -> np.ndarray:
        return np.all(np.isfinite(self.source_pixels), axis=-1)


@dataclass(frozen=True, eq=False)
class RegisteredImage:
    data: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True, eq=False)
class MultimodalPointCloud:
    points: np.ndarray  # (N, 3) depth-camera frame
    target_pixels: np.ndarray  # (N, 2) integer (col, row)
    values: dict = field(default_factory=dict)  # camera id -> (N, K) float, NaN where not sampled
    cases: dict = field(default_factory=dict)  # camera id -> (N,) uint8

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    target_id: str
    object_mesh: TriangleMesh
    uncertainty_mesh: TriangleMesh
    field: TargetRayField
    correspondences: dict
    images: dict  # camera id -> RegisteredImage
    case_masks: dict  # camera id -> (H, W) uint8
    area_mask: np.ndarray  # (H, W) uint8
    point_cloud: MultimodalPointCloud


def target_rays(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Unit rays through the undistorted pixel centers of ``cam``, in the depth-camera frame."""
    d = cam.pixel_rays().xyz
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    return cam.origin_in_depth, d @ cam.from_depth.R


def cast_target_rays(rig: CameraRig, target_id: str, accel_mo: AccelStructure, accel_mu: AccelStructure,
                     workers: int | None = None) -> TargetRayField:
    """Intersect every target pixel ray with both meshes and classify P4 / P5 / P6."""
    cam = rig[target_id]
    o, d = target_rays(cam)
    ho = raycast.first_hits(accel_mo, o, d, workers=workers)
    hu = raycast.first_hits(accel_mu, o, d, workers=workers)
    # curtains start on object-mesh boundaries: hits that close to the object hit count as the object
    curtain_first = hu.hit & (~ho.hit | (hu.t < ho.t - SELF_HIT_EPS))
    area = np.full(ho.t.shape, P6, dtype=np.uint8)
    area[ho.hit] = P4
    area[curtain_first] = P5
    return TargetRayField(target_id, o, d, ho, hu, area)


def correspond(field: TargetRayField, rig: CameraRig, source_id: str, accel_mo: AccelStructure,
               accel_mu: AccelStructure, workers: int | None = None, epsilon: float = SELF_HIT_EPS) -> CorrespondenceMap:
    """Map every object-mesh hit of the target into the source camera and assign its case.

    Precedence when several conditions hold: P2 > P3_1 > P3_2 > P1.
    """
    cam = rig[source_id]
    shape = field.shape
    hit = field.object_hits.hit
    P = field.object_hits.points
    cases = np.where(field.area == P4, UNMAPPED, field.area).astype(np.uint8)
    src_px = np.full(shape + (2,), np.nan)
    idx = np.flatnonzero(hit.ravel())
    if len(idx) == 0:
        return CorrespondenceMap(source_id, src_px, P, cases)

    Ph = P.reshape(-1, 3)[idx]
    S = cam.origin_in_depth
    seg = Ph - S
    dist = np.linalg.norm(seg, axis=1)
    dirs = seg / dist[:, None]
    occluded = raycast.any_hits(accel_mo, S, dirs, epsilon, dist - epsilon, workers)
    curtain = raycast.any_hits(accel_mu, S, dirs, epsilon, dist - epsilon, workers)
    provisional = field.provisional_p31.ravel()[idx]

    c = np.full(len(idx), P1, dtype=np.uint8)
    c[curtain] = P3_2
    c[provisional] = P3_1
    c[occluded] = P2

    uv = cam.project_xyz(cam.from_depth.apply(Ph)).uv
    inside = cam.in_bounds(uv)
    c[~inside] = UNMAPPED
    uv[~inside] = np.nan

    flat_cases = cases.reshape(-1)
    flat_cases[idx] = c
    src_px.reshape(-1, 2)[idx] = uv
    return CorrespondenceMap(source_id, src_px, P, cases)


def _null_value(dtype):
    return np.nan if np.issubdtype(dtype, np.floating) else 0


def sample(image: np.ndarray, uv: np.ndarray, interp: str = "bilinear") -> np.ndarray:
    """Sample ``image`` (H, W[, K]) at raw pixel coordinates ``uv`` (N, 2); returns float (N[, K])."""
    img = np.asarray(image)
    h, w = img.shape[:2]
    u, v = uv[:, 0], uv[:, 1]
    if interp == "nearest":
        c = np.clip(np.floor(u).astype(np.int64), 0, w - 1)
        r = np.clip(np.floor(v).astype(np.int64), 0, h - 1)
        return img[r, c].astype(float)
    if interp != "bilinear":
        raise ValueError(f"unknown interpolation {interp!r}")
    # pixel centers sit at integer index + 0.5
    x = np.clip(u - 0.5, 0.0, w - 1.0)
    y = np.clip(v - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(x).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(y).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = x - x0
    ay = y - y0
    if img.ndim == 3:
        ax = ax[:, None]
        ay = ay[:, None]
    f = img.astype(float)
    top = f[y0, x0] * (1 - ax) + f[y0, x1] * ax
    bot = f[y1, x0] * (1 - ax) + f[y1, x1] * ax
    return top * (1 - ay) + bot * ay


def _mapped_for_output(cmap: CorrespondenceMap, include_occluded: bool) -> np.ndarray:
    m = cmap.mapped
    if not include_occluded:
        m &= cmap.cases != P2
    return m


def resample(source_image: np.ndarray, cmap: CorrespondenceMap, source_cam: CameraModel | None = None,
             interp: str = "bilinear", include_occluded: bool = False) -> RegisteredImage:
    """Registered image in the target's pixel grid.

    Unmapped pixels (and occluded P2 pixels unless ``include_occluded``) hold
    NaN for float images and 0 for integer images; ``valid`` marks the rest.
    """
    img = np.asarray(source_image)
    if source_cam is not None and img.shape[:2] != (source_cam.height, source_cam.width):
        raise ValueError(
            f"image of camera {source_cam.id!r} is {img.shape[1]}x{img.shape[0]}, "
            f"expected {source_cam.width}x{source_cam.height}"
        )
    shape = cmap.cases.shape
    valid = _mapped_for_output(cmap, include_occluded)
    out = np.full(shape + img.shape[2:], _null_value(img.dtype), dtype=img.dtype)
    if valid.any():
        vals = sample(img, cmap.source_pixels[valid], interp)
        if np.issubdtype(img.dtype, np.integer):
            info = np.iinfo(img.dtype)
            vals = np.clip(np.rint(vals), info.min, info.max)
        out[valid] = vals.astype(img.dtype)
    return RegisteredImage(out, valid)


def build_meshes(depth_map: DepthMap, config: RigConfig) -> tuple[TriangleMesh, TriangleMesh]:
    mo = mesh_from_depth(depth_map, config.roi, config.angle_threshold_deg)
    mu = build_uncertainty_mesh(mo, config.rig.depth_camera.origin_in_depth, config.ground)
    return mo, mu


def register_all(config: RigConfig, target_id: str, depth_map: DepthMap, images: dict | None = None,
                 interp: str = "bilinear", include_occluded: bool = False,
                 workers: int | None = None) -> RegistrationResult:
    """Full pipeline for one target: meshes and target rays once, then every source with an image."""
    rig = config.rig
    rig[target_id]  # unknown ids fail early
    images = dict(images or {})
    for cid in images:
        rig[cid]
    mo, mu = build_meshes(depth_map, config)
    acc_mo, acc_mu = raycast.build(mo), raycast.build(mu)
    fld = cast_target_rays(rig, target_id, acc_mo, acc_mu, workers)

    obj = fld.object_mask
    rows, cols = np.nonzero(obj)
    cloud_pts = fld.object_hits.points[obj]
    values, cloud_cases = {}, {}
    cmaps, regs, masks = {}, {}, {}
    for cid in sorted(images):
        cam = rig[cid]
        cm = correspond(fld, rig, cid, acc_mo, acc_mu, workers)
        reg = resample(images[cid], cm, cam, interp, include_occluded)
        cmaps[cid], regs[cid], masks[cid] = cm, reg, cm.cases
        img = np.asarray(images[cid])
        k = 1 if img.ndim == 2 else img.shape[2]
        vals = np.full((len(rows), k), np.nan)
        ok = _mapped_for_output(cm, include_occluded)[obj]
        if ok.any():
            vals[ok] = sample(img, cm.source_pixels[obj][ok], interp).reshape(-1, k)
        values[cid] = vals
        cloud_cases[cid] = cm.cases[obj]
    cloud = MultimodalPointCloud(cloud_pts, np.stack([cols, rows], axis=1), values, cloud_cases)
    return RegistrationResult(target_id, mo, mu, fld, cmaps, regs, masks, fld.area.copy(), cloud)
