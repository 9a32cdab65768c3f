"""Planar-target calibration: homographies, closed-form initialization and LM refinement."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .camera import CameraModel, CameraRig
from .errors import EstimationError, InsufficientDataError, NumericError, OptimizationError
from .geometry import Distortion, Intrinsics, RigidTransform, distort, undistort
from .optimize import levenberg_marquardt

# smallest accepted ratio between the two smallest singular values of the conic constraint system
CONDITION_MIN = 1e-6
BOARD_FRAME = "board"


@dataclass(frozen=True)
class BoardSpec:
    """Checkerboard with ``rows x cols`` inner corners spaced ``square`` meters apart."""

    rows: int
    cols: int
    square: float

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2 or not self.square > 0:
            raise ValueError(f"invalid board {self.rows}x{self.cols}:{self.square}")

    def point(self, row, col) -> np.ndarray:
        return np.stack([np.asarray(col) * self.square, np.asarray(row) * self.square], axis=-1).astype(float)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        """``(row, col)`` index arrays and matching board-plane points, row-major."""
        rc = np.array(list(itertools.product(range(self.rows), range(self.cols))))
        return rc, self.point(rc[:, 0], rc[:, 1])


@dataclass(frozen=True, eq=False)
class CalibrationView:
    """Corner observations of one board pose seen by one camera."""

    camera_id: str
    view_id: str
    board_points: np.ndarray  # (N, 2) meters in the board plane
    image_points: np.ndarray  # (N, 2) raw pixels
    corner_ids: np.ndarray | None = None  # (N, 2) board (row, col)

    def __post_init__(self):
        b = np.asarray(self.board_points, dtype=float).reshape(-1, 2)
        p = np.asarray(self.image_points, dtype=float).reshape(-1, 2)
        if len(b) != len(p):
            raise ValueError("board and image point counts differ")
        if len(b) < 4:
            raise InsufficientDataError(
                f"view {self.view_id!r} of camera {self.camera_id!r} has {len(b)} corners, need at least 4"
            )
        object.__setattr__(self, "board_points", b)
        object.__setattr__(self, "image_points", p)

    @property
    def n(self) -> int:
        return len(self.board_points)

    @classmethod
    def from_grid(cls, board: BoardSpec, camera_id, view_id, corner_ids, image_points) -> "CalibrationView":
        ids = np.asarray(corner_ids, dtype=int).reshape(-1, 2)
        if np.any(ids < 0) or np.any(ids[:, 0] >= board.rows) or np.any(ids[:, 1] >= board.cols):
            raise ValueError(f"corner index outside the {board.rows}x{board.cols} board")
        return cls(camera_id, view_id, board.point(ids[:, 0], ids[:, 1]), image_points, ids)


@dataclass(frozen=True, eq=False)
class CameraCalibration:
    camera_id: str
    intrinsics: Intrinsics
    distortion: Distortion
    poses: dict  # view id -> RigidTransform board -> camera
    views: list
    residuals: np.ndarray  # (N, 2) reprojection residuals in pixels, views concatenated in order
    costs: list = field(default_factory=list)

    @property
    def mean_error(self) -> float:
        return float(np.mean(np.linalg.norm(self.residuals, axis=1)))


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    cameras: dict  # camera id -> CameraCalibration
    pairs: dict  # (a, b) -> RigidTransform a -> b

    def transform(self, src: str, dst: str) -> RigidTransform:
        if src == dst:
            return RigidTransform.identity(src)
        try:
            return self.pairs[(src, dst)]
        except KeyError:
            raise InsufficientDataError(f"no extrinsics for pair {src}-{dst}") from None

    def to_rig(self, depth_camera_id: str, modalities: dict | None = None) -> CameraRig:
        modalities = modalities or {}
        cams = {}
        for cid, cal in self.cameras.items():
            cams[cid] = CameraModel(
                cid, cal.intrinsics, cal.distortion, self.transform(depth_camera_id, cid),
                modalities.get(cid, ""),
            )
        return CameraRig(cams, depth_camera_id)


# ---------------------------------------------------------------------------
# closed-form steps


def _normalizer(pts: np.ndarray) -> np.ndarray:
    c = pts.mean(axis=0)
    d = np.mean(np.linalg.norm(pts - c, axis=1))
    if not d > 0:
        raise EstimationError("degenerate point configuration")
    s = np.sqrt(2.0) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _hom(p: np.ndarray) -> np.ndarray:
    return np.concatenate([p, np.ones((len(p), 1))], axis=1)


def estimate_homography(board_pts, image_pts) -> np.ndarray:
    """Normalized DLT homography mapping board points to image points, ``|H|_F = 1``."""
    b = np.asarray(board_pts, dtype=float).reshape(-1, 2)
    p = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    if len(b) != len(p):
        raise ValueError("point counts differ")
    if len(b) < 4:
        raise InsufficientDataError(f"insufficient points for a homography ({len(b)} < 4)")
    for pts in (b, p):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[1] <= 1e-12 * max(sv[0], 1e-300):
            raise EstimationError("degenerate configuration: points are collinear")
    Tb, Tp = _normalizer(b), _normalizer(p)
    bn = _hom(b) @ Tb.T
    pn = _hom(p) @ Tp.T
    n = len(b)
    A = np.zeros((2 * n, 9))
    A[0::2, 0:3] = bn
    A[0::2, 6:9] = -pn[:, 0:1] * bn
    A[1::2, 3:6] = bn
    A[1::2, 6:9] = -pn[:, 1:2] * bn
    _, s, vt = np.linalg.svd(A)
    if s[7] <= 1e-12 * s[0]:
        raise EstimationError("degenerate configuration: homography is not unique")
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.solve(Tp, Hn @ Tb)
    H /= np.linalg.norm(H)
    if H[2, 2] < 0:
        H = -H
    return H


def _v(H: np.ndarray, i: int, j: int) -> np.ndarray:
    hi, hj = H[:, i], H[:, j]
    # coefficients of (B11, B22, B13, B23, B33) in h_i^T B h_j with zero skew
    return np.array([
        hi[0] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])


def init_intrinsics(homographies, image_size=None) -> Intrinsics:
    """Closed-form zero-skew intrinsics from at least three board homographies.

    Constraints are solved in a normalized image frame (centered, unit scale)
    to keep the system well conditioned.
    """
    Hs = [np.asarray(H, dtype=float) for H in homographies]
    if len(Hs) < 3:
        raise InsufficientDataError(f"insufficient views for intrinsics ({len(Hs)} < 3)")
    if image_size is not None:
        w, h = image_size
        c = np.array([w / 2.0, h / 2.0])
        s = (w + h) / 2.0
    else:
        origins = np.array([H[:2, 2] / H[2, 2] for H in Hs])
        c = origins.mean(axis=0)
        s = max(float(np.max(np.abs(origins - c))), 1.0)
    N = np.array([[1 / s, 0, -c[0] / s], [0, 1 / s, -c[1] / s], [0, 0, 1.0]])
    rows = []
    for H in Hs:
        Hn = N @ H
        Hn /= np.linalg.norm(Hn)
        rows.append(_v(Hn, 0, 1))
        rows.append(_v(Hn, 0, 0) - _v(Hn, 1, 1))
    V = np.array(rows)
    _, sv, vt = np.linalg.svd(V)
    if sv[-2] < CONDITION_MIN * sv[0]:
        raise EstimationError(
            f"ill-conditioned intrinsic constraints (singular value ratio {sv[-2] / sv[0]:.3g}); "
            "boards are too close to parallel"
        )
    B11, B22, B13, B23, B33 = vt[-1]
    if B11 < 0:
        B11, B22, B13, B23, B33 = -B11, -B22, -B13, -B23, -B33
    if not (B11 > 0 and B22 > 0):
        raise EstimationError("image of the absolute conic is not positive definite")
    v0 = -B23 / B22
    lam = B33 - (B13 * B13 - v0 * B11 * B23) / B11
    if not lam > 0:
        raise EstimationError("image of the absolute conic is not positive definite")
    fx = np.sqrt(lam / B11)
    fy = np.sqrt(lam / B22)
    u0 = -B13 * fx * fx / lam
    K = np.linalg.solve(N, np.array([[fx, 0, u0], [0, fy, v0], [0, 0, 1.0]]))
    K /= K[2, 2]
    if image_size is None:
        w = int(np.ceil(2 * max(K[0, 2], 1.0)))
        h = int(np.ceil(2 * max(K[1, 2], 1.0)))
    return Intrinsics(float(K[0, 0]), float(K[1, 1]), float(K[0, 2]), float(K[1, 2]), int(w), int(h))


def init_extrinsics(H, K, camera_id: str = "camera") -> RigidTransform:
    """Board pose in the camera frame from a homography and known intrinsics."""
    Kinv = np.linalg.inv(np.asarray(K, dtype=float))
    H = np.asarray(H, dtype=float)
    a1, a2, a3 = Kinv @ H[:, 0], Kinv @ H[:, 1], Kinv @ H[:, 2]
    lam = 2.0 / (np.linalg.norm(a1) + np.linalg.norm(a2))
    if (lam * a3)[2] < 0:
        lam = -lam
    r1, r2, t = lam * a1, lam * a2, lam * a3
    R = np.stack([r1, r2, np.cross(r1, r2)], axis=1)
    u, _, vt = np.linalg.svd(R)
    R = u @ np.diag([1.0, 1.0, np.linalg.det(u @ vt)]) @ vt
    return RigidTransform(R, t, BOARD_FRAME, camera_id)


# ---------------------------------------------------------------------------
# projection with derivatives

N_INTR = 9  # fx, fy, cx, cy, k1, k2, p1, p2, k3
_RADIAL = (4, 5, 8)  # k1, k2, k3 in the intrinsic vector


def _intr_vector(intr: Intrinsics, dist: Distortion) -> np.ndarray:
    return np.concatenate([[intr.fx, intr.fy, intr.cx, intr.cy], dist.as_array()])


def _project_jac(p: np.ndarray, Xc: np.ndarray):
    """Pixels of camera-frame points plus d(uv)/d(intrinsics) (N,2,9) and d(uv)/d(Xc) (N,2,3)."""
    fx, fy, cx, cy, k1, k2, p1, p2, k3 = p
    X, Y, Z = Xc[:, 0], Xc[:, 1], Xc[:, 2]
    x, y = X / Z, Y / Z
    r2 = x * x + y * y
    r4 = r2 * r2
    r6 = r4 * r2
    rad = 1 + k1 * r2 + k2 * r4 + k3 * r6
    drad = k1 + 2 * k2 * r2 + 3 * k3 * r4  # d rad / d r2
    xd = x * rad + 2 * p1 * x * y + p2 * (r2 + 2 * x * x)
    yd = y * rad + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y
    uv = np.stack([fx * xd + cx, fy * yd + cy], axis=1)

    n = len(Xc)
    Ji = np.zeros((n, 2, N_INTR))
    Ji[:, 0, 0] = xd
    Ji[:, 1, 1] = yd
    Ji[:, 0, 2] = 1.0
    Ji[:, 1, 3] = 1.0
    Ji[:, 0, 4] = fx * x * r2
    Ji[:, 1, 4] = fy * y * r2
    Ji[:, 0, 5] = fx * x * r4
    Ji[:, 1, 5] = fy * y * r4
    Ji[:, 0, 6] = fx * 2 * x * y
    Ji[:, 1, 6] = fy * (r2 + 2 * y * y)
    Ji[:, 0, 7] = fx * (r2 + 2 * x * x)
    Ji[:, 1, 7] = fy * 2 * x * y
    Ji[:, 0, 8] = fx * x * r6
    Ji[:, 1, 8] = fy * y * r6

    dxd_dx = rad + 2 * x * x * drad + 2 * p1 * y + 6 * p2 * x
    dxd_dy = 2 * x * y * drad + 2 * p1 * x + 2 * p2 * y
    dyd_dx = 2 * x * y * drad + 2 * p1 * x + 2 * p2 * y
    dyd_dy = rad + 2 * y * y * drad + 6 * p1 * y + 2 * p2 * x
    Jd = np.empty((n, 2, 2))
    Jd[:, 0, 0] = fx * dxd_dx
    Jd[:, 0, 1] = fx * dxd_dy
    Jd[:, 1, 0] = fy * dyd_dx
    Jd[:, 1, 1] = fy * dyd_dy
    Jn = np.zeros((n, 2, 3))
    Jn[:, 0, 0] = 1 / Z
    Jn[:, 0, 2] = -x / Z
    Jn[:, 1, 1] = 1 / Z
    Jn[:, 1, 2] = -y / Z
    return uv, Ji, Jd @ Jn


def _skew(v: np.ndarray) -> np.ndarray:
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def _exp(w: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(w.reshape(-1, 3)).as_matrix().reshape(w.shape[:-1] + (3, 3))


def project_board(intr: Intrinsics, dist: Distortion, pose: RigidTransform, board_pts) -> np.ndarray:
    b = np.asarray(board_pts, dtype=float)
    Xb = np.concatenate([b, np.zeros((len(b), 1))], axis=1)
    Xc = pose.apply(Xb)
    xn = Xc[:, :2] / Xc[:, 2:3]
    xd = distort(dist, xn)
    return np.stack([intr.fx * xd[:, 0] + intr.cx, intr.fy * xd[:, 1] + intr.cy], axis=1)


# ---------------------------------------------------------------------------
# single-camera refinement


@dataclass(frozen=True)
class _State:
    p: np.ndarray  # intrinsic vector
    R: np.ndarray  # (V, 3, 3)
    t: np.ndarray  # (V, 3)


def refine(views, intrinsics: Intrinsics, poses, distortion: Distortion | None = None,
           fix_distortion: bool = False, radial_terms: int = 3) -> CameraCalibration:
    """Joint LM refinement of intrinsics, distortion and every board pose.

    ``poses`` lists the initial board pose per view, in the order of ``views``.
    Only the first ``radial_terms`` radial coefficients are estimated; the rest are held at 0.
    """
    views = list(views)
    if not views:
        raise InsufficientDataError("no views to refine")
    cam_id = views[0].camera_id
    distortion = distortion or Distortion()
    nv = len(views)
    Xb = np.concatenate([np.c_[v.board_points, np.zeros(v.n)] for v in views])
    obs = np.concatenate([v.image_points for v in views])
    vid = np.concatenate([np.full(v.n, i) for i, v in enumerate(views)])
    n = len(obs)
    free = np.ones(N_INTR, dtype=bool)
    if fix_distortion:
        free[4:] = False
    free[list(_RADIAL[radial_terms:])] = False
    n_free = int(free.sum())

    def points(s: _State):
        RX = np.einsum("nij,nj->ni", s.R[vid], Xb)
        return RX, RX + s.t[vid]

    def residual(s: _State):
        _, Xc = points(s)
        uv, _, _ = _project_jac(s.p, Xc)
        return (uv - obs).ravel()

    def jacobian(s: _State):
        RX, Xc = points(s)
        _, Ji, Jx = _project_jac(s.p, Xc)
        J = np.zeros((n, 2, n_free + 6 * nv))
        J[:, :, :n_free] = Ji[:, :, free]
        Jw = -Jx @ _skew(RX)  # left-multiplicative rotation perturbation
        rows = np.arange(n)
        for k in range(3):
            J[rows, :, n_free + 6 * vid + k] = Jw[:, :, k]
            J[rows, :, n_free + 6 * vid + 3 + k] = Jx[:, :, k]
        return J.reshape(2 * n, -1)

    def retract(s: _State, dx):
        p = s.p.copy()
        p[free] += dx[:n_free]
        d = dx[n_free:].reshape(nv, 6)
        return _State(p, _exp(d[:, :3]) @ s.R, s.t + d[:, 3:])

    p0 = _intr_vector(intrinsics, distortion)
    if not fix_distortion:
        p0[list(_RADIAL[radial_terms:])] = 0.0
    s0 = _State(
        p0,
        np.array([P.R for P in poses]),
        np.array([P.t for P in poses]),
    )
    res = levenberg_marquardt(residual, jacobian, s0, retract)
    s = res.x
    fx, fy, cx, cy = s.p[:4]
    intr = Intrinsics(float(fx), float(fy), float(cx), float(cy), intrinsics.width, intrinsics.height)
    dist = Distortion.from_array(s.p[4:])
    out_poses = {v.view_id: RigidTransform(s.R[i], s.t[i], BOARD_FRAME, cam_id) for i, v in enumerate(views)}
    return CameraCalibration(cam_id, intr, dist, out_poses, views, residual(s).reshape(-1, 2), res.costs)


def calibrate_camera(views, image_size) -> CameraCalibration:
    """Closed-form initialization followed by full refinement for one camera."""
    views = list(views)
    Hs = [estimate_homography(v.board_points, v.image_points) for v in views]
    intr0 = init_intrinsics(Hs, image_size)
    w, h = image_size
    intr0 = Intrinsics(
        intr0.fx, intr0.fy, float(np.clip(intr0.cx, 0, w - 1e-6)), float(np.clip(intr0.cy, 0, h - 1e-6)), w, h
    )
    poses = [init_extrinsics(H, intr0.matrix, views[0].camera_id) for H in Hs]
    # boards rarely reach the image corners, so high radial terms can fold the model over
    # inside the unit disk; drop them until the fit is invertible there
    for terms in (3, 2, 1):
        cal = refine(views, intr0, poses, radial_terms=terms)
        try:
            cal.distortion.check_invertible()
            return cal
        except NumericError:
            continue
    raise EstimationError(f"no invertible distortion fits the views ({cal.distortion})")


def estimate_board_pose(view: CalibrationView, intrinsics: Intrinsics, distortion: Distortion) -> RigidTransform:
    """Board pose for one view with the camera model held fixed."""
    xn = undistort(distortion, (view.image_points - [intrinsics.cx, intrinsics.cy]) / [intrinsics.fx, intrinsics.fy])
    H = estimate_homography(view.board_points, xn)
    pose = init_extrinsics(H, np.eye(3), view.camera_id)
    p = _intr_vector(intrinsics, distortion)
    Xb = np.c_[view.board_points, np.zeros(view.n)]

    def residual(T: RigidTransform):
        return (_project_jac(p, T.apply(Xb))[0] - view.image_points).ravel()

    def jacobian(T: RigidTransform):
        RX = Xb @ T.R.T
        _, _, Jx = _project_jac(p, RX + T.t)
        return np.concatenate([-Jx @ _skew(RX), Jx], axis=2).reshape(-1, 6)

    def retract(T: RigidTransform, dx):
        return RigidTransform(_exp(dx[:3]) @ T.R, T.t + dx[3:], T.src, T.dst)

    return levenberg_marquardt(residual, jacobian, pose, retract).x


# ---------------------------------------------------------------------------
# stereo extrinsics


def mean_rotation(Rs) -> np.ndarray:
    """Chordal mean via the dominant eigenvector of summed quaternion outer products."""
    return Rotation.from_matrix(np.asarray(Rs)).mean().as_matrix()


def _pair_estimate(calA: CameraCalibration, calB: CameraCalibration, shared) -> RigidTransform:
    Ms = [calB.poses[v] @ calA.poses[v].inverse() for v in shared]
    R = mean_rotation([M.R for M in Ms])
    t = np.mean([M.t for M in Ms], axis=0)
    M0 = RigidTransform(R, t, calA.camera_id, calB.camera_id)

    viewsA = {v.view_id: v for v in calA.views}
    viewsB = {v.view_id: v for v in calB.views}
    # board corners in each camera frame from that camera's own fixed pose
    XA = np.concatenate([calA.poses[v].apply(np.c_[viewsB[v].board_points, np.zeros(viewsB[v].n)]) for v in shared])
    obsB = np.concatenate([viewsB[v].image_points for v in shared])
    XB = np.concatenate([calB.poses[v].apply(np.c_[viewsA[v].board_points, np.zeros(viewsA[v].n)]) for v in shared])
    obsA = np.concatenate([viewsA[v].image_points for v in shared])
    pA = _intr_vector(calA.intrinsics, calA.distortion)
    pB = _intr_vector(calB.intrinsics, calB.distortion)

    def residual(M: RigidTransform):
        uvB, _, _ = _project_jac(pB, M.apply(XA))
        uvA, _, _ = _project_jac(pA, M.inverse().apply(XB))
        return np.concatenate([(uvB - obsB).ravel(), (uvA - obsA).ravel()])

    def jacobian(M: RigidTransform):
        RXA = XA @ M.R.T
        _, _, JxB = _project_jac(pB, RXA + M.t)
        JB = np.concatenate([-JxB @ _skew(RXA), JxB], axis=2).reshape(-1, 6)
        # x_A = R^T (X_B - t): perturbing R <- exp(w) R, t <- t + dt
        Y = (XB - M.t) @ M.R  # = R^T (X_B - t)
        _, _, JxA = _project_jac(pA, Y)
        # d(R^T exp(-w) (X_B - t)) / dw = R^T [X_B - t]_x
        dYdw = np.einsum("ij,njk->nik", M.R.T, _skew(XB - M.t))
        dYdt = -M.R.T
        JA = np.concatenate([JxA @ dYdw, JxA @ dYdt], axis=2).reshape(-1, 6)
        return np.concatenate([JB, JA])

    def retract(M: RigidTransform, dx):
        return RigidTransform(_exp(dx[:3]) @ M.R, M.t + dx[3:], M.src, M.dst)

    return levenberg_marquardt(residual, jacobian, M0, retract).x


def stereo_extrinsics(calA: CameraCalibration, calB: CameraCalibration, shared=None) -> RigidTransform:
    """Rigid map from camera A's frame into camera B's frame.

    The estimate is always computed in a canonical camera order and inverted
    when needed, so swapping A and B yields the exact inverse.
    """
    if shared is None:
        shared = sorted(set(calA.poses) & set(calB.poses))
    shared = list(shared)
    if not shared:
        raise InsufficientDataError(f"no shared views between cameras {calA.camera_id} and {calB.camera_id}")
    if calA.camera_id == calB.camera_id:
        return RigidTransform.identity(calA.camera_id)
    if calB.camera_id < calA.camera_id:
        return _pair_estimate(calB, calA, shared).inverse()
    return _pair_estimate(calA, calB, shared)


def calibrate_rig(views, image_sizes: dict) -> CalibrationResult:
    """Calibrate every camera, then every ordered pair of cameras."""
    by_cam: dict = {}
    for v in views:
        by_cam.setdefault(v.camera_id, []).append(v)
    cams = {}
    for cid in sorted(by_cam):
        if cid not in image_sizes:
            raise InsufficientDataError(f"image size of camera {cid!r} unknown")
        if len(by_cam[cid]) < 3:
            raise InsufficientDataError(f"camera {cid!r} has {len(by_cam[cid])} views, need at least 3")
        try:
            cams[cid] = calibrate_camera(by_cam[cid], image_sizes[cid])
        except EstimationError as e:
            raise EstimationError(f"camera {cid}: {e}") from e
        except OptimizationError as e:
            raise OptimizationError(f"camera {cid}: {e}", e.last_iterate) from e
    pairs = {}
    for a, b in itertools.combinations(sorted(cams), 2):
        shared = sorted(set(cams[a].poses) & set(cams[b].poses))
        if not shared:
            raise InsufficientDataError(f"no shared views between cameras {a} and {b}")
        try:
            M = stereo_extrinsics(cams[a], cams[b], shared)
        except OptimizationError as e:
            raise OptimizationError(f"pair {a}-{b}: {e}", e.last_iterate) from e
        pairs[(a, b)] = M
        pairs[(b, a)] = M.inverse()
    return CalibrationResult(cams, pairs)
