"""Pinhole projection, Brown-Conrady distortion and frame-tagged rigid transforms.

Pixel coordinates are continuous; the pixel with integer index ``(col, row)``
covers ``[col, col + 1) x [row, row + 1)`` so its center is at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, FrameMismatchError, NumericError

ORTHO_TOL = 1e-9
UNDISTORT_MAX_ITER = 20
UNDISTORT_TOL = 1e-8


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width <= 0 or self.height <= 0:
            raise DomainError(f"image size must be positive, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise DomainError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def inverse_matrix(self) -> np.ndarray:
        # algebraic inverse: the offset terms carry a negative sign
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @property
    def size(self) -> tuple[int, int]:
        return self.width, self.height


@dataclass(frozen=True)
class Distortion:
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0

    @property
    def is_zero(self) -> bool:
        return self.k1 == self.k2 == self.k3 == self.p1 == self.p2 == 0.0

    def as_array(self) -> np.ndarray:
        """Coefficients in (k1, k2, p1, p2, k3) order."""
        return np.array([self.k1, self.k2, self.p1, self.p2, self.k3])

    @classmethod
    def from_array(cls, a) -> "Distortion":
        k1, k2, p1, p2, k3 = (float(x) for x in a)
        return cls(k1=k1, k2=k2, k3=k3, p1=p1, p2=p2)

    def check_invertible(self, radius: float = 1.0, tol: float = 1e-6, samples: int = 64) -> None:
        """Raise NumericError unless distort/undistort round-trips on the disk."""
        r = np.linspace(0.0, radius, samples)
        a = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
        rr, aa = np.meshgrid(r, a)
        x = np.stack([rr * np.cos(aa), rr * np.sin(aa)], axis=-1).reshape(-1, 2)
        back = undistort(self, distort(self, x))
        err = float(np.max(np.abs(back - x)))
        if not err <= tol:
            raise NumericError(f"distortion {self} not invertible on |x| <= {radius} (error {err:.3g})")


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    Q = u @ vt
    if np.linalg.det(Q) < 0:
        u[:, -1] *= -1
        Q = u @ vt
    return Q


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Maps points from frame ``src`` to frame ``dst``: ``x_dst = R x_src + t``."""

    R: np.ndarray
    t: np.ndarray
    src: str = "src"
    dst: str = "dst"

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        drift = np.max(np.abs(R.T @ R - np.eye(3)))
        if drift > 1e-3 or np.linalg.det(R) < 0:
            raise DomainError("R is not a proper rotation matrix")
        if drift > ORTHO_TOL:
            R = _orthonormalize(R)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls, frame: str = "src", dst: str | None = None) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3), frame, frame if dst is None else dst)

    @classmethod
    def from_matrix(cls, M, src: str = "src", dst: str = "dst") -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3], src, dst)

    @property
    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M

    @property
    def origin(self) -> np.ndarray:
        """Position of the ``dst`` frame origin expressed in ``src`` coordinates."""
        return -self.R.T @ self.t

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t, self.dst, self.src)

    def apply(self, xyz) -> np.ndarray:
        """Untagged application on raw ``(..., 3)`` arrays."""
        return np.asarray(xyz, dtype=float) @ self.R.T + self.t

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        if other.dst != self.src:
            raise FrameMismatchError(f"cannot compose {other.src}->{other.dst} then {self.src}->{self.dst}")
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t, other.src, self.dst)

    def with_frames(self, src: str, dst: str) -> "RigidTransform":
        return RigidTransform(self.R, self.t, src, dst)


@dataclass(frozen=True, eq=False)
class Point3:
    """One or many 3D points (trailing axis of length 3) in a named frame."""

    xyz: np.ndarray
    frame: str

    def __post_init__(self):
        xyz = np.array(self.xyz, dtype=float)
        if xyz.shape[-1:] != (3,):
            raise ValueError(f"Point3 expects trailing dimension 3, got shape {xyz.shape}")
        object.__setattr__(self, "xyz", xyz)

    @property
    def X(self):
        return self.xyz[..., 0]

    @property
    def Y(self):
        return self.xyz[..., 1]

    @property
    def Z(self):
        return self.xyz[..., 2]

    def scaled(self, s) -> "Point3":
        return Point3(self.xyz * np.asarray(s, dtype=float)[..., None], self.frame)


@dataclass(frozen=True, eq=False)
class PixelCoord:
    uv: np.ndarray

    def __post_init__(self):
        uv = np.array(self.uv, dtype=float)
        if uv.shape[-1:] != (2,):
            raise ValueError(f"PixelCoord expects trailing dimension 2, got shape {uv.shape}")
        object.__setattr__(self, "uv", uv)

    @property
    def u(self):
        return self.uv[..., 0]

    @property
    def v(self):
        return self.uv[..., 1]


def _xyz(p) -> np.ndarray:
    return p.xyz if isinstance(p, Point3) else np.asarray(p, dtype=float)


def project(intr: Intrinsics, p) -> PixelCoord:
    """Pinhole projection of camera-frame points (no distortion)."""
    xyz = _xyz(p)
    Z = xyz[..., 2]
    if np.any(~(Z > 0) & np.isfinite(Z)):
        raise DomainError("point behind camera")
    u = intr.fx * xyz[..., 0] / Z + intr.cx
    v = intr.fy * xyz[..., 1] / Z + intr.cy
    return PixelCoord(np.stack([u, v], axis=-1))


def backproject(intr: Intrinsics, px, frame: str = "camera") -> Point3:
    """Direction ``((u - cx)/fx, (v - cy)/fy, 1)``; the viewing ray is its positive multiples."""
    uv = px.uv if isinstance(px, PixelCoord) else np.asarray(px, dtype=float)
    x = (uv[..., 0] - intr.cx) / intr.fx
    y = (uv[..., 1] - intr.cy) / intr.fy
    return Point3(np.stack([x, y, np.ones_like(x)], axis=-1), frame)


def transform(T: RigidTransform, p: Point3) -> Point3:
    if p.frame != T.src:
        raise FrameMismatchError(f"point in frame {p.frame!r} given to transform from {T.src!r}")
    return Point3(T.apply(p.xyz), T.dst)


def invert(T: RigidTransform) -> RigidTransform:
    return T.inverse()


def compose(second: RigidTransform, first: RigidTransform) -> RigidTransform:
    """Transform applying ``first`` then ``second``."""
    return second @ first


def distort(d: Distortion, xn) -> np.ndarray:
    """Brown-Conrady forward model on normalized image coordinates ``(..., 2)``."""
    xn = np.asarray(xn, dtype=float)
    x, y = xn[..., 0], xn[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
    xd = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort(d: Distortion, xd) -> np.ndarray:
    """Invert :func:`distort` by fixed-point iteration."""
    xd = np.asarray(xd, dtype=float)
    if d.is_zero:
        return xd.copy()
    x = xd.copy()
    step = np.inf
    for _ in range(UNDISTORT_MAX_ITER):
        xx, yy = x[..., 0], x[..., 1]
        r2 = xx * xx + yy * yy
        radial = 1.0 + r2 * (d.k1 + r2 * (d.k2 + r2 * d.k3))
        dx = 2.0 * d.p1 * xx * yy + d.p2 * (r2 + 2.0 * xx * xx)
        dy = d.p1 * (r2 + 2.0 * yy * yy) + 2.0 * d.p2 * xx * yy
        new = np.stack([(xd[..., 0] - dx) / radial, (xd[..., 1] - dy) / radial], axis=-1)
        delta = np.abs(new - x)
        step = float(np.max(delta[np.isfinite(delta)], initial=0.0))
        x = new
        if step < 1e-15:
            break
    if step > UNDISTORT_TOL:
        raise NumericError(f"undistortion did not converge in {UNDISTORT_MAX_ITER} iterations (step {step:.3g})")
    return x


def pixel_centers(width: int, height: int) -> np.ndarray:
    """``(height, width, 2)`` array of continuous (u, v) pixel-center coordinates."""
    u = np.arange(width, dtype=float) + 0.5
    v = np.arange(height, dtype=float) + 0.5
    uu, vv = np.meshgrid(u, v)
    return np.stack([uu, vv], axis=-1)


def rotation_about(axis, angle_rad: float) -> np.ndarray:
    """Rotation matrix for a right-handed rotation about ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1 - np.cos(angle_rad)) * K @ K


def look_at(position, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """Rotation taking world vectors into a camera frame at ``position`` whose +Z faces ``target``.

    Camera axes follow the image convention: +X right, +Y down.
    """
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z /= np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=float), z)
    x = -x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])
