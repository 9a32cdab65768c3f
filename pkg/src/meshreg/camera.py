"""Calibrated cameras and the multi-camera rig anchored at the depth camera."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, FrameMismatchError
from .geometry import (
    Distortion,
    Intrinsics,
    PixelCoord,
    Point3,
    RigidTransform,
    backproject,
    distort,
    pixel_centers,
    project,
    undistort,
)


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Intrinsics, distortion and the rigid map from the depth-camera frame into this camera."""

    id: str
    intrinsics: Intrinsics
    distortion: Distortion = field(default_factory=Distortion)
    from_depth: RigidTransform | None = None
    modality: str = ""

    def __post_init__(self):
        if self.from_depth is not None and self.from_depth.dst != self.id:
            raise FrameMismatchError(
                f"camera {self.id!r} transform targets frame {self.from_depth.dst!r}"
            )

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def project(self, p: Point3, with_distortion: bool = True) -> PixelCoord:
        """Project points given in this camera's frame to raw pixel coordinates."""
        if p.frame != self.id:
            raise FrameMismatchError(f"point in frame {p.frame!r} projected by camera {self.id!r}")
        return self.project_xyz(p.xyz, with_distortion)

    def project_xyz(self, xyz, with_distortion: bool = True) -> PixelCoord:
        """Untagged projection; points with Z <= 0 yield NaN instead of raising."""
        xyz = np.asarray(xyz, dtype=float)
        Z = xyz[..., 2]
        front = Z > 0
        safe = np.where(front[..., None], xyz, np.array([0.0, 0.0, 1.0]))
        xn = safe[..., :2] / safe[..., 2:3]
        if with_distortion and not self.distortion.is_zero:
            xn = distort(self.distortion, xn)
        uv = np.stack(
            [self.intrinsics.fx * xn[..., 0] + self.intrinsics.cx, self.intrinsics.fy * xn[..., 1] + self.intrinsics.cy],
            axis=-1,
        )
        uv[~front] = np.nan
        return PixelCoord(uv)

    def normalized(self, uv, with_distortion: bool = True) -> np.ndarray:
        """Raw pixel coordinates to undistorted normalized coordinates."""
        ray = backproject(self.intrinsics, uv, self.id).xyz[..., :2]
        if with_distortion and not self.distortion.is_zero:
            ray = undistort(self.distortion, ray)
        return ray

    def rays(self, uv, with_distortion: bool = True) -> Point3:
        """Viewing-ray directions with Z = 1 in this camera's frame."""
        xn = self.normalized(uv, with_distortion)
        return Point3(np.concatenate([xn, np.ones(xn.shape[:-1] + (1,))], axis=-1), self.id)

    def pixel_rays(self) -> Point3:
        """Rays through every pixel center, shape ``(height, width, 3)``."""
        return self.rays(pixel_centers(self.width, self.height))

    def in_bounds(self, uv) -> np.ndarray:
        uv = np.asarray(uv)
        u, v = uv[..., 0], uv[..., 1]
        return (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)

    @property
    def origin_in_depth(self) -> np.ndarray:
        """Optical center in the depth-camera frame."""
        return self.from_depth.origin

    def replace(self, **kw) -> "CameraModel":
        args = dict(
            id=self.id,
            intrinsics=self.intrinsics,
            distortion=self.distortion,
            from_depth=self.from_depth,
            modality=self.modality,
        )
        args.update(kw)
        return CameraModel(**args)


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: dict
    depth_camera_id: str

    def __post_init__(self):
        cams = dict(self.cameras)
        if self.depth_camera_id not in cams:
            raise ConfigError(f"depth camera {self.depth_camera_id!r} not in rig")
        for cid, cam in cams.items():
            if cam.id != cid:
                raise ConfigError(f"camera keyed {cid!r} has id {cam.id!r}")
            if cam.from_depth is None:
                raise ConfigError(f"camera {cid!r} has no transform from the depth camera")
            if cam.from_depth.src != self.depth_camera_id:
                raise FrameMismatchError(
                    f"camera {cid!r} transform starts in frame {cam.from_depth.src!r}, "
                    f"expected {self.depth_camera_id!r}"
                )
        object.__setattr__(self, "cameras", cams)

    def __getitem__(self, cid: str) -> CameraModel:
        try:
            return self.cameras[cid]
        except KeyError:
            raise KeyError(f"unknown camera id {cid!r}") from None

    def __contains__(self, cid) -> bool:
        return cid in self.cameras

    def __iter__(self):
        return iter(self.cameras)

    @property
    def ids(self) -> list:
        return list(self.cameras)

    @property
    def depth_camera(self) -> CameraModel:
        return self.cameras[self.depth_camera_id]

    def transform(self, src: str, dst: str) -> RigidTransform:
        """Rigid map from camera ``src``'s frame into camera ``dst``'s frame."""
        return self[dst].from_depth @ self[src].from_depth.inverse()


@dataclass(frozen=True)
class ROI:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    z_min: float
    z_max: float

    def __post_init__(self):
        for a in "xyz":
            lo, hi = getattr(self, f"{a}_min"), getattr(self, f"{a}_max")
            if not lo < hi:
                raise ConfigError(f"ROI {a}-range must satisfy min < max, got [{lo}, {hi}]")

    def contains(self, xyz) -> np.ndarray:
        xyz = np.asarray(xyz)
        x, y, z = xyz[..., 0], xyz[..., 1], xyz[..., 2]
        return (
            (x >= self.x_min) & (x <= self.x_max)
            & (y >= self.y_min) & (y <= self.y_max)
            & (z >= self.z_min) & (z <= self.z_max)
        )


@dataclass(frozen=True, eq=False)
class RigConfig:
    """Everything the registration pipeline needs besides images."""

    rig: CameraRig
    roi: ROI
    ground_z: float | None = None
    angle_threshold_deg: float = 15.0

    @property
    def ground(self) -> float:
        return self.roi.z_max if self.ground_z is None else self.ground_z
