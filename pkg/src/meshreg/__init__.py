"""Pixel-level registration of heterogeneous camera images through a depth-derived triangle mesh."""

from .calibration import (
    BoardSpec,
    CalibrationResult,
    CalibrationView,
    CameraCalibration,
    calibrate_camera,
    calibrate_rig,
    estimate_board_pose,
)
from .camera import ROI, CameraModel, CameraRig, RigConfig
from .errors import (
    ConfigError,
    DomainError,
    EstimationError,
    FormatError,
    FrameMismatchError,
    InsufficientDataError,
    MeshRegError,
    NumericError,
    OptimizationError,
)
from .geometry import Distortion, Intrinsics, RigidTransform
from .mesh import DepthMap, TriangleMesh, build_object_mesh, build_uncertainty_mesh, depth_to_vertices, mesh_from_depth
from .metrics import ErrorReport, depth_error, extrinsic_error, intrinsic_error, normalize
from .raycast import build as build_accel
from .raycast import first_hits
from .registration import RegistrationResult, correspond, register_all, resample

__version__ = "0.1.0"
