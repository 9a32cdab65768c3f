"""Analytic scenes, virtual rigs and brute-force ground truth.

Scenes live in the depth-camera frame (+Z away from the depth camera,
towards the ground plane). Primitives are intersected analytically, so the
ground truth never touches the mesh or BVH code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .calibration import BoardSpec, CalibrationView, project_board
from .camera import ROI, CameraModel, CameraRig, RigConfig
from .errors import InsufficientDataError
from .geometry import Distortion, Intrinsics, RigidTransform, look_at, rotation_about
from .mesh import DepthMap

PLANE, RECTANGLE, DISK, SPHERE = 0, 1, 2, 3
KINDS = {"plane": PLANE, "rectangle": RECTANGLE, "disk": DISK, "sphere": SPHERE}
CONSTANT, CHECKER, GRADIENT = 0, 1, 2
TEXTURES = {"constant": CONSTANT, "checker": CHECKER, "gradient": GRADIENT}
EDGE_TOL = 1e-12
OCCLUDED_STEP = 5e-4


@dataclass(frozen=True)
class Texture:
    """View-independent procedural texture over a primitive's surface coordinates (meters)."""

    kind: str = "constant"
    pitch: float = 0.01  # checker square size
    values: tuple = (0.5, 0.5)  # checker low/high, or constant value
    gradient: tuple = (0.5, 0.0, 0.0)  # offset, d/ds, d/dt

    def __post_init__(self):
        if self.kind not in TEXTURES:
            raise ValueError(f"unknown texture kind {self.kind!r}")
        if not self.pitch > 0:
            raise ValueError("checker pitch must be positive")


@dataclass(frozen=True)
class Primitive:
    kind: str
    center: tuple
    u_axis: tuple = (1.0, 0.0, 0.0)
    v_axis: tuple = (0.0, 1.0, 0.0)
    half_size: tuple = (0.0, 0.0)  # rectangle half extents along u and v
    radius: float = 0.0  # disk and sphere
    texture: Texture = field(default_factory=Texture)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        u = np.asarray(self.u_axis, float)
        v = np.asarray(self.v_axis, float)
        if abs(np.linalg.norm(u) - 1) > 1e-9 or abs(np.linalg.norm(v) - 1) > 1e-9 or abs(u @ v) > 1e-9:
            raise ValueError("primitive axes must be orthonormal")
        if self.kind == "rectangle" and not min(self.half_size) > 0:
            raise ValueError("rectangle half sizes must be positive")
        if self.kind in ("disk", "sphere") and not self.radius > 0:
            raise ValueError(f"{self.kind} radius must be positive")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        c = np.asarray(self.center, float)
        if self.kind == "sphere":
            return c - self.radius, c + self.radius
        if self.kind == "plane":
            return np.full(3, -np.inf), np.full(3, np.inf)
        u, v = np.asarray(self.u_axis, float), np.asarray(self.v_axis, float)
        if self.kind == "disk":
            ext = self.radius * np.sqrt(u * u + v * v)
        else:
            ext = self.half_size[0] * np.abs(u) + self.half_size[1] * np.abs(v)
        return c - ext, c + ext


def rectangle(center, half_size, texture=None, tilt_deg: float = 0.0, tilt_axis=(1.0, 0.0, 0.0)) -> Primitive:
    R = rotation_about(tilt_axis, np.radians(tilt_deg))
    return Primitive("rectangle", tuple(center), tuple(R[:, 0]), tuple(R[:, 1]), tuple(half_size),
                     texture=texture or Texture())


@dataclass(frozen=True)
class SceneSpec:
    primitives: tuple
    ground_z: float = 1.2
    roi: ROI | None = None
    ground_texture: Texture = field(default_factory=lambda: Texture("checker", 0.05, (0.1, 0.3)))

    def __post_init__(self):
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.roi is not None:
            for i, p in enumerate(self.primitives):
                lo, hi = p.bounds()
                box_lo = np.array([self.roi.x_min, self.roi.y_min, self.roi.z_min])
                box_hi = np.array([self.roi.x_max, self.roi.y_max, self.roi.z_max])
                if np.any(lo < box_lo - 1e-9) or np.any(hi > box_hi + 1e-9):
                    raise ValueError(f"primitive {i} ({p.kind}) extends outside the ROI")

    @property
    def default_roi(self) -> ROI:
        return self.roi or ROI(-1.0, 1.0, -1.0, 1.0, 0.05, self.ground_z - 0.005)


@dataclass(frozen=True, eq=False)
class _Packed:
    kind: np.ndarray
    center: np.ndarray
    u: np.ndarray
    v: np.ndarray
    n: np.ndarray
    half: np.ndarray
    radius: np.ndarray
    occluder: np.ndarray  # False for the ground plane
    tex_kind: np.ndarray
    tex_params: np.ndarray  # pitch, lo, hi, g0, gs, gt


def _pack(scene: SceneSpec) -> _Packed:
    prims = list(scene.primitives) + [
        Primitive("plane", (0.0, 0.0, scene.ground_z), texture=scene.ground_texture)
    ]
    u = np.array([p.u_axis for p in prims], float)
    v = np.array([p.v_axis for p in prims], float)
    occ = np.ones(len(prims), dtype=np.bool_)
    occ[-1] = False
    return _Packed(
        kind=np.array([KINDS[p.kind] for p in prims], np.int64),
        center=np.array([p.center for p in prims], float),
        u=u,
        v=v,
        n=np.cross(u, v),
        half=np.array([p.half_size for p in prims], float),
        radius=np.array([p.radius for p in prims], float),
        occluder=occ,
        tex_kind=np.array([TEXTURES[p.texture.kind] for p in prims], np.int64),
        tex_params=np.array(
            [[p.texture.pitch, *p.texture.values, *p.texture.gradient] for p in prims], float
        ),
    )


# ---------------------------------------------------------------------------
# numba kernels


@nb.njit(cache=True, nogil=True)
def _prim_t(k, kind, C, U, V, N, half, radius, o, d):
    """Nearest positive ray parameter of primitive ``k`` or inf."""
    if kind[k] == 3:
        oc0 = o[0] - C[k, 0]
        oc1 = o[1] - C[k, 1]
        oc2 = o[2] - C[k, 2]
        a = d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
        b = oc0 * d[0] + oc1 * d[1] + oc2 * d[2]
        c = oc0 * oc0 + oc1 * oc1 + oc2 * oc2 - radius[k] * radius[k]
        disc = b * b - a * c
        if disc < 0:
            return np.inf
        sq = np.sqrt(disc)
        t = (-b - sq) / a
        if t > 0:
            return t
        t = (-b + sq) / a
        return t if t > 0 else np.inf
    den = d[0] * N[k, 0] + d[1] * N[k, 1] + d[2] * N[k, 2]
    if den == 0.0:
        return np.inf
    t = ((C[k, 0] - o[0]) * N[k, 0] + (C[k, 1] - o[1]) * N[k, 1] + (C[k, 2] - o[2]) * N[k, 2]) / den
    if not t > 0:
        return np.inf
    if kind[k] == 0:
        return t
    p0 = o[0] + t * d[0] - C[k, 0]
    p1 = o[1] + t * d[1] - C[k, 1]
    p2 = o[2] + t * d[2] - C[k, 2]
    s = p0 * U[k, 0] + p1 * U[k, 1] + p2 * U[k, 2]
    r = p0 * V[k, 0] + p1 * V[k, 1] + p2 * V[k, 2]
    if kind[k] == 1:
        if abs(s) <= half[k, 0] + EDGE_TOL and abs(r) <= half[k, 1] + EDGE_TOL:
            return t
        return np.inf
    if s * s + r * r <= radius[k] * radius[k] + EDGE_TOL:
        return t
    return np.inf


@nb.njit(cache=True, nogil=True)
def _trace_kernel(kind, C, U, V, N, half, radius, active, O, D, out_t, out_id):
    for i in range(O.shape[0]):
        best = np.inf
        bid = -1
        for k in range(kind.shape[0]):
            if not active[k]:
                continue
            t = _prim_t(k, kind, C, U, V, N, half, radius, O[i], D[i])
            if t < best:
                best = t
                bid = k
        out_t[i] = best
        out_id[i] = bid


@nb.njit(cache=True, nogil=True)
def _blocked(kind, C, U, V, N, half, radius, occ, o, d, t_end):
    for k in range(kind.shape[0]):
        if occ[k]:
            t = _prim_t(k, kind, C, U, V, N, half, radius, o, d)
            if t < t_end:
                return True
    return False


@nb.njit(cache=True, nogil=True)
def _segment_blocked_kernel(kind, C, U, V, N, half, radius, occ, O, P, rel, out):
    """Whether the open segment from O[i] to P[i] crosses an occluding primitive."""
    d = np.empty(3)
    for i in range(O.shape[0]):
        L = 0.0
        for j in range(3):
            d[j] = P[i, j] - O[i, j]
            L += d[j] * d[j]
        L = np.sqrt(L)
        if not L > 0:
            out[i] = False
            continue
        for j in range(3):
            d[j] /= L
        out[i] = _blocked(kind, C, U, V, N, half, radius, occ, O[i], d, L * (1.0 - rel) - rel)


@nb.njit(cache=True, nogil=True)
def _occluded_kernel(kind, C, U, V, N, half, radius, occ, O, D, t_end, step, ground, z_top,
                     fx, fy, cx, cy, W, H, out):
    """First sample along each ray lying in the depth camera's shadow volume (-1 if none)."""
    q = np.empty(3)
    dq = np.empty(3)
    zero = np.zeros(3)
    for i in range(O.shape[0]):
        out[i] = -1.0
        n = int(np.floor(t_end[i] / step))
        # jump to the last sample still above z_top; the sample positions are unchanged
        m0 = 1
        if D[i, 2] > 0 and z_top > O[i, 2]:
            m0 = max(1, int(np.floor((z_top - O[i, 2]) / (step * D[i, 2]))))
        for m in range(m0, n + 1):
            s = m * step
            if s >= t_end[i]:
                break
            for j in range(3):
                q[j] = O[i, j] + s * D[i, j]
            if q[2] >= ground and D[i, 2] >= 0:
                break
            # nothing can shadow a point above the highest occluder
            if not (q[2] > z_top and q[2] < ground):
                continue
            u = fx * q[0] / q[2] + cx
            v = fy * q[1] / q[2] + cy
            if not (u >= 0 and u < W and v >= 0 and v < H):
                continue
            L = np.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2])
            for j in range(3):
                dq[j] = q[j] / L
            if _blocked(kind, C, U, V, N, half, radius, occ, zero, dq, L * (1.0 - 1e-9) - 1e-9):
                out[i] = s
                break


def _prim_args(pk: _Packed):
    return pk.kind, pk.center, pk.u, pk.v, pk.n, pk.half, pk.radius


def trace(scene: SceneSpec, origins, directions, include_ground: bool = True):
    """Analytic nearest hit: ``(t, primitive id)`` per ray, id -1 on a miss; ``t`` in direction units."""
    pk = _pack(scene)
    D = np.ascontiguousarray(np.asarray(directions, float).reshape(-1, 3))
    O = np.asarray(origins, float)
    O = np.ascontiguousarray(np.broadcast_to(O.reshape(-1, 3), D.shape) if O.size == 3 else O.reshape(-1, 3))
    active = pk.occluder.copy() if not include_ground else np.ones(len(pk.kind), np.bool_)
    t = np.empty(len(D))
    pid = np.empty(len(D), np.int64)
    _trace_kernel(*_prim_args(pk), active, O, D, t, pid)
    shape = np.shape(directions)[:-1]
    return t.reshape(shape), pid.reshape(shape)


def segment_blocked(scene: SceneSpec, origins, points, rel: float = 1e-9) -> np.ndarray:
    pk = _pack(scene)
    P = np.ascontiguousarray(np.asarray(points, float).reshape(-1, 3))
    O = np.asarray(origins, float)
    O = np.ascontiguousarray(np.broadcast_to(O.reshape(-1, 3), P.shape) if O.size == 3 else O.reshape(-1, 3))
    out = np.zeros(len(P), np.bool_)
    _segment_blocked_kernel(*_prim_args(pk), pk.occluder, O, P, rel, out)
    return out.reshape(np.shape(points)[:-1])


def first_occluded_sample(scene: SceneSpec, depth_camera: CameraModel, origins, directions, t_end,
                          step: float = OCCLUDED_STEP) -> np.ndarray:
    """Ray parameter of the first sample inside the depth camera's shadow volume, or -1."""
    pk = _pack(scene)
    D = np.ascontiguousarray(np.asarray(directions, float).reshape(-1, 3))
    O = np.asarray(origins, float)
    O = np.ascontiguousarray(np.broadcast_to(O.reshape(-1, 3), D.shape) if O.size == 3 else O.reshape(-1, 3))
    te = np.ascontiguousarray(np.broadcast_to(np.asarray(t_end, float), np.shape(directions)[:-1]).reshape(-1))
    out = np.empty(len(D))
    intr = depth_camera.intrinsics
    tops = [p.bounds()[0][2] for p in scene.primitives]
    z_top = min(tops) if tops else np.inf
    _occluded_kernel(*_prim_args(pk), pk.occluder, O, D, te, step, scene.ground_z, z_top,
                     intr.fx, intr.fy, intr.cx, intr.cy, intr.width, intr.height, out)
    return out.reshape(np.shape(directions)[:-1])


# ---------------------------------------------------------------------------
# rendering


def camera_rays(cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Origin and unit pixel-center ray directions of ``cam`` in the scene (depth-camera) frame."""
    d = cam.pixel_rays().xyz
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    R = cam.from_depth.R
    return cam.origin_in_depth, d @ R


def render_hits(scene: SceneSpec, cam: CameraModel, include_ground: bool = True):
    """Per pixel: scene-frame hit point (NaN on miss) and primitive id."""
    o, d = camera_rays(cam)
    t, pid = trace(scene, o, d, include_ground)
    P = o + d * np.where(pid >= 0, t, np.nan)[..., None]
    return P, pid


def render_depth(scene: SceneSpec, cam: CameraModel, noise_sigma: float = 0.0, flying_pixels: bool = False,
                 seed: int = 0, include_ground: bool = True) -> DepthMap:
    """Z depth in ``cam``'s frame of the nearest primitive; misses are invalid."""
    P, pid = render_hits(scene, cam, include_ground)
    Z = cam.from_depth.apply(P)[..., 2]
    valid = pid >= 0
    rng = np.random.default_rng(seed)
    if flying_pixels:
        Z = _add_flying_pixels(Z, valid, rng)
    if noise_sigma > 0:
        Z = Z + rng.normal(0.0, noise_sigma, Z.shape)
    Z = np.where(valid, Z, 0.0)
    valid &= Z > 0
    return DepthMap(Z, cam.intrinsics, valid, cam.distortion)


def _add_flying_pixels(Z, valid, rng, jump: float = 0.02):
    """Blend depths of pixels on a silhouette (4-neighbour jump > ``jump``) with the far side."""
    out = Z.copy()
    Zp = np.pad(np.where(valid, Z, np.nan), 1, constant_values=np.nan)
    H, W = Z.shape
    far = np.full(Z.shape, -np.inf)
    for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0)):
        nb_ = Zp[1 + dy:1 + dy + H, 1 + dx:1 + dx + W]
        with np.errstate(invalid="ignore"):
            far = np.where(np.isfinite(nb_) & (nb_ - Z > jump), np.maximum(far, nb_), far)
    edge = valid & np.isfinite(far)
    alpha = rng.uniform(0.0, 1.0, Z.shape)
    out[edge] = alpha[edge] * Z[edge] + (1 - alpha[edge]) * far[edge]
    return out


@nb.njit(cache=True)
def _texture_kernel(tex_kind, tex_params, kind, C, U, V, P, pid, out):
    for i in range(P.shape[0]):
        k = pid[i]
        if k < 0:
            out[i] = np.nan
            continue
        if kind[k] == 3:
            s = P[i, 0] - C[k, 0]
            r = P[i, 1] - C[k, 1]
        else:
            q0 = P[i, 0] - C[k, 0]
            q1 = P[i, 1] - C[k, 1]
            q2 = P[i, 2] - C[k, 2]
            s = q0 * U[k, 0] + q1 * U[k, 1] + q2 * U[k, 2]
            r = q0 * V[k, 0] + q1 * V[k, 1] + q2 * V[k, 2]
        pitch, lo, hi, g0, gs, gt = tex_params[k]
        if tex_kind[k] == 0:
            out[i] = lo
        elif tex_kind[k] == 1:
            c = int(np.floor(s / pitch)) + int(np.floor(r / pitch))
            out[i] = lo if c % 2 == 0 else hi
        else:
            out[i] = g0 + gs * s + gt * r


def texture_at(scene: SceneSpec, points, pid) -> np.ndarray:
    pk = _pack(scene)
    P = np.ascontiguousarray(np.asarray(points, float).reshape(-1, 3))
    ids = np.ascontiguousarray(np.asarray(pid, np.int64).reshape(-1))
    out = np.empty(len(P))
    _texture_kernel(pk.tex_kind, pk.tex_params, pk.kind, pk.center, pk.u, pk.v, P, ids, out)
    return out.reshape(np.shape(pid))


def channel_values(value, channels: int) -> np.ndarray:
    """Deterministic per-channel affine variants of a scalar texture value."""
    k = np.arange(channels)
    return np.asarray(value)[..., None] * (1.0 - 0.5 * k / max(channels, 1)) + 0.25 * k / max(channels, 1)


def render_modality(scene: SceneSpec, cam: CameraModel, channels: int = 1) -> np.ndarray:
    """Float image ``(H, W)`` or ``(H, W, channels)`` of surface texture; NaN where nothing is hit."""
    P, pid = render_hits(scene, cam)
    val = texture_at(scene, P, pid)
    if channels == 1:
        return val
    return channel_values(val, channels)


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image; NaN (background) becomes 0."""
    return np.clip(np.round(np.nan_to_num(img, nan=0.0) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# ground truth


@dataclass(frozen=True, eq=False)
class SourceTruth:
    pixels: np.ndarray  # (H, W, 2) raw source pixel of the true point (NaN when behind the camera)
    in_bounds: np.ndarray
    visible: np.ndarray  # line of sight from the source to the point is free
    outgoing_occluded: np.ndarray | None  # segment from the source crosses the depth camera's shadow


@dataclass(frozen=True, eq=False)
class GroundTruth:
    points: np.ndarray  # (H, W, 3) true first hit in the depth-camera frame, NaN on a miss
    primitive: np.ndarray  # (H, W) primitive id, -1 on a miss, ground plane is the last id
    object_hit: np.ndarray  # first hit lies on a non-ground primitive
    depth_visible: np.ndarray  # the true point is seen by the depth camera
    incoming_occluded: np.ndarray  # the target ray crosses the shadow volume before its first hit (all False if not computed)
    sources: dict = field(default_factory=dict)

    @property
    def valid(self) -> np.ndarray:
        return np.all(np.isfinite(self.points), axis=-1)


def ground_truth(scene: SceneSpec, rig: CameraRig, target_id: str, sources=None, step: float = OCCLUDED_STEP,
                 occluded_volume: bool = True, outgoing: bool = False) -> GroundTruth:
    """Brute-force per-pixel truth for the target camera and each source camera."""
    tgt = rig[target_id]
    o, d = camera_rays(tgt)
    t, pid = trace(scene, o, d)
    P = o + d * np.where(pid >= 0, t, np.nan)[..., None]
    ground_id = len(scene.primitives)
    hit = pid >= 0
    obj = hit & (pid != ground_id)
    t_end = np.where(hit, t, 10.0)
    if occluded_volume:
        incoming = first_occluded_sample(scene, rig.depth_camera, o, d, t_end, step) >= 0
    else:
        incoming = np.zeros(hit.shape, bool)
    depth_vis = np.zeros(hit.shape, bool)
    depth_vis[hit] = ~segment_blocked(scene, np.zeros(3), P[hit])
    srcs = {}
    for sid in (rig.ids if sources is None else sources):
        cam = rig[sid]
        Pc = cam.from_depth.apply(P)
        px = cam.project_xyz(Pc).uv
        inb = cam.in_bounds(px) & hit
        vis = np.zeros(hit.shape, bool)
        so = cam.origin_in_depth
        vis[hit] = ~segment_blocked(scene, so, P[hit])
        out_occ = None
        if outgoing:
            seg = P - so
            L = np.linalg.norm(seg, axis=-1)
            dirs = seg / np.where(L > 0, L, 1.0)[..., None]
            s_occ = first_occluded_sample(scene, rig.depth_camera, so, np.nan_to_num(dirs),
                                          np.where(hit, L, 0.0), step)
            out_occ = s_occ >= 0
        srcs[sid] = SourceTruth(px, inb, vis & hit, out_occ)
    return GroundTruth(P, pid, obj, depth_vis, incoming, srcs)


# ---------------------------------------------------------------------------
# rigs, boards and scenes


def default_rig(distortion: bool = True, depth_size=(640, 576), depth_f: float = 420.0,
                satellite_size=(320, 240), satellite_f: float = 300.0, aim=(0.0, 0.0, 0.9)) -> CameraRig:
    """Depth camera at the origin plus a narrow (10 cm) and a wide (40 cm) baseline camera, toed in on ``aim``."""
    W, H = depth_size
    depth = CameraModel(
        "depth", Intrinsics(depth_f, depth_f, W / 2.0, H / 2.0, W, H), Distortion(),
        RigidTransform.identity("depth"), "ir",
    )
    cams = {"depth": depth}
    w, h = satellite_size
    specs = [
        ("narrow", (0.10, 0.0, 0.0), "thermal", Distortion(k1=-0.08, k2=0.01, p1=0.0005, p2=-0.0003)),
        ("wide", (-0.28, 0.28, 0.02), "rgb", Distortion(k1=0.05, k2=-0.01, p1=-0.0004, p2=0.0002)),
    ]
    for cid, pos, mod, dist in specs:
        R = look_at(pos, aim)
        T = RigidTransform(R, -R @ np.asarray(pos), "depth", cid)
        cams[cid] = CameraModel(
            cid, Intrinsics(satellite_f, satellite_f * 1.01, w / 2.0 + 1.5, h / 2.0 - 2.0, w, h),
            dist if distortion else Distortion(), T, mod,
        )
    return CameraRig(cams, "depth")


def default_roi(ground_z: float = 1.2) -> ROI:
    return ROI(-0.6, 0.6, -0.5, 0.5, 0.3, ground_z - 0.005)


def rig_config(rig: CameraRig, ground_z: float = 1.2, roi: ROI | None = None) -> RigConfig:
    return RigConfig(rig, roi or default_roi(ground_z), ground_z)


def aligned_rectangle(depth_cam: CameraModel, z: float, cols, rows, texture=None) -> Primitive:
    """Fronto-parallel rectangle at depth ``z`` whose edges pass exactly through the
    pixel-center rays of columns ``cols[0]``, ``cols[1]`` and rows ``rows[0]``, ``rows[1]``."""
    intr = depth_cam.intrinsics
    x0, x1 = (z * (c + 0.5 - intr.cx) / intr.fx for c in cols)
    y0, y1 = (z * (r + 0.5 - intr.cy) / intr.fy for r in rows)
    return Primitive("rectangle", ((x0 + x1) / 2, (y0 + y1) / 2, z),
                     half_size=((x1 - x0) / 2, (y1 - y0) / 2), texture=texture or Texture())


def _pixel_box(depth_cam: CameraModel, cols, rows):
    """Pixel offsets laid out for a 640x576 depth image, rescaled to the camera's size."""
    W, H = depth_cam.width, depth_cam.height
    sx, sy = W / 640.0, H / 576.0
    return ((W // 2 + round(cols[0] * sx), W // 2 + round(cols[1] * sx)),
            (H // 2 + round(rows[0] * sy), H // 2 + round(rows[1] * sy)))


def two_plane_scene(depth_cam: CameraModel, ground_z: float = 1.2) -> SceneSpec:
    """Small occluding rectangle above a larger lower rectangle."""
    upper = aligned_rectangle(depth_cam, 0.7, *_pixel_box(depth_cam, (-60, 20), (-50, 30)),
                              Texture("gradient", gradient=(0.6, 2.0, -1.0)))
    lower = aligned_rectangle(depth_cam, 1.0, *_pixel_box(depth_cam, (-200, 190), (-170, 160)),
                              Texture("checker", 0.02, (0.2, 0.9)))
    return SceneSpec((upper, lower), ground_z, default_roi(ground_z))


def two_leaf_scene(depth_cam: CameraModel, ground_z: float = 1.2) -> SceneSpec:
    """Two stacked leaves over the ground plane (the ground is outside the ROI)."""
    top = aligned_rectangle(depth_cam, 0.65, *_pixel_box(depth_cam, (-70, 30), (-40, 50)),
                            Texture("gradient", gradient=(0.5, 1.5, 0.8)))
    low = aligned_rectangle(depth_cam, 0.9, *_pixel_box(depth_cam, (-20, 110), (-90, 20)),
                            Texture("checker", 0.015, (0.3, 0.7)))
    return SceneSpec((top, low), ground_z, default_roi(ground_z))


def procedural_scene(seed: int = 0, n_leaves: int = 12, ground_z: float = 1.2,
                     max_tilt_deg: float = 12.0) -> SceneSpec:
    """Randomly tilted textured leaves and disks plus one sphere, inside the default ROI.

    Tilts stay under the default 15 degree meshing threshold so leaves survive meshing.
    """
    rng = np.random.default_rng(seed)
    roi = default_roi(ground_z)
    prims = []
    for i in range(n_leaves):
        c = (rng.uniform(-0.3, 0.3), rng.uniform(-0.25, 0.25), rng.uniform(0.55, 1.0))
        tex = Texture("gradient", gradient=(rng.uniform(0.2, 0.8), rng.uniform(-3, 3), rng.uniform(-3, 3)))
        axis = rng.normal(size=3)
        R = rotation_about(axis, np.radians(rng.uniform(0, max_tilt_deg)))
        if i % 3 == 2:
            prims.append(Primitive("disk", c, tuple(R[:, 0]), tuple(R[:, 1]),
                                   radius=rng.uniform(0.04, 0.08), texture=tex))
        else:
            prims.append(Primitive("rectangle", c, tuple(R[:, 0]), tuple(R[:, 1]),
                                   (rng.uniform(0.04, 0.1), rng.uniform(0.03, 0.06)), texture=tex))
    prims.append(Primitive("sphere", (0.1, -0.1, 0.95), radius=0.06,
                           texture=Texture("gradient", gradient=(0.5, 2.0, 2.0))))
    return SceneSpec(tuple(prims), ground_z, roi)


def board_primitive(board: BoardSpec, pose: RigidTransform, margin: float | None = None) -> Primitive:
    """Rectangle covering the inner-corner grid plus one square of margin, placed by ``pose`` (board -> depth)."""
    margin = board.square if margin is None else margin
    w = (board.cols - 1) * board.square
    h = (board.rows - 1) * board.square
    c = pose.apply(np.array([w / 2, h / 2, 0.0]))
    return Primitive("rectangle", tuple(c), tuple(pose.R[:, 0]), tuple(pose.R[:, 1]),
                     (w / 2 + margin, h / 2 + margin), texture=Texture("checker", board.square, (0.0, 1.0)))


def board_view_ok(rig: CameraRig, board: BoardSpec, pose: RigidTransform) -> bool:
    _, bp = board.grid()
    for cam in rig.cameras.values():
        Xc = (cam.from_depth @ pose).apply(np.c_[bp, np.zeros(len(bp))])
        if np.any(Xc[:, 2] <= 0.05):
            return False
        if not np.all(cam.in_bounds(cam.project_xyz(Xc).uv)):
            return False
    return True


def random_board_poses(rig: CameraRig, board: BoardSpec, n: int, seed: int = 0, z_range=(0.5, 0.9),
                       max_tilt_deg: float = 40.0, max_tries: int = 10000) -> list:
    """Board poses (board -> depth frame) visible in every camera, by rejection sampling."""
    rng = np.random.default_rng(seed)
    w = (board.cols - 1) * board.square
    h = (board.rows - 1) * board.square
    poses = []
    for _ in range(max_tries):
        if len(poses) == n:
            break
        tilt = np.radians(rng.uniform(10.0, max_tilt_deg))
        az = rng.uniform(0, 2 * np.pi)
        R = rotation_about([np.cos(az), np.sin(az), 0.0], tilt) @ rotation_about([0, 0, 1], rng.uniform(-0.4, 0.4))
        z = rng.uniform(*z_range)
        c = np.array([rng.uniform(-0.08, 0.05), rng.uniform(-0.06, 0.06), z])
        t = c - R @ np.array([w / 2, h / 2, 0.0])
        pose = RigidTransform(R, t, "board", rig.depth_camera_id)
        if board_view_ok(rig, board, pose):
            poses.append(pose)
    if len(poses) < n:
        raise InsufficientDataError(f"found only {len(poses)} of {n} board poses visible in every camera")
    return poses


def frontal_board_poses(rig: CameraRig, board: BoardSpec, n: int, z: float = 0.7) -> list:
    w = (board.cols - 1) * board.square
    h = (board.rows - 1) * board.square
    poses = []
    for i in range(n):
        R = rotation_about([0, 0, 1], 0.1 * i)
        c = np.array([0.01 * i - 0.02, 0.005 * i, z + 0.02 * i])
        poses.append(RigidTransform(R, c - R @ np.array([w / 2, h / 2, 0.0]), "board", rig.depth_camera_id))
    return poses


def make_checkerboard_views(rig: CameraRig, board: BoardSpec, poses, noise_sigma: float = 0.0,
                            seed: int = 0) -> list:
    """Corner observations (distorted pixels plus Gaussian noise) of every valid pose in every camera."""
    rng = np.random.default_rng(seed)
    rc, bp = board.grid()
    views = []
    n_valid = 0
    for i, pose in enumerate(poses):
        if not board_view_ok(rig, board, pose):
            continue
        n_valid += 1
        for cid in rig.ids:
            cam = rig[cid]
            uv = project_board(cam.intrinsics, cam.distortion, cam.from_depth @ pose, bp)
            if noise_sigma > 0:
                uv = uv + rng.normal(0.0, noise_sigma, uv.shape)
            views.append(CalibrationView(cid, f"v{i:02d}", bp, uv, rc))
    if n_valid == 0:
        raise InsufficientDataError("no board pose is fully visible in every camera")
    return views


def board_depth_map(rig: CameraRig, board: BoardSpec, pose: RigidTransform, noise_sigma: float = 0.0,
                    bias: float = 0.0, seed: int = 0) -> DepthMap:
    """Depth camera view of the board alone (no ground), optionally biased and noisy."""
    scene = SceneSpec((board_primitive(board, pose),), ground_z=1e6)
    dm = render_depth(scene, rig.depth_camera, noise_sigma, seed=seed, include_ground=False)
    if bias:
        dm = DepthMap(np.where(dm.valid, dm.depth + bias, 0.0), dm.intrinsics, dm.valid, dm.distortion)
    return dm


def undistorted_pixel(cam: CameraModel, uv) -> np.ndarray:
    """Raw pixel -> ideal pinhole pixel of the same camera."""
    xn = cam.normalized(uv)
    i = cam.intrinsics
    return np.stack([i.fx * xn[..., 0] + i.cx, i.fy * xn[..., 1] + i.cy], axis=-1)

