"""Depth map to object mesh, boundary extraction and the occluded-space curtain mesh."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .camera import ROI
from .errors import DomainError
from .geometry import Distortion, Intrinsics, backproject, pixel_centers, undistort

MIN_TRIANGLE_AREA = 1e-12


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Metric Z depth per pixel of the depth camera."""

    depth: np.ndarray
    intrinsics: Intrinsics
    valid: np.ndarray | None = None
    distortion: Distortion = field(default_factory=Distortion)

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=float)
        if depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError(
                f"depth grid {depth.shape[::-1]} does not match intrinsics "
                f"{self.intrinsics.width}x{self.intrinsics.height}"
            )
        valid = np.isfinite(depth) & (depth > 0)
        if self.valid is not None:
            valid &= np.asarray(self.valid, dtype=bool)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height


@dataclass(frozen=True, eq=False)
class VertexGrid:
    points: np.ndarray  # (H, W, 3), depth-camera frame
    valid: np.ndarray  # (H, W)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    source_pixels: np.ndarray | None = None  # (N, 2) integer (col, row) per vertex
    parent_vertex: np.ndarray | None = None  # curtain meshes: generating object-mesh vertex

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        F = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", F)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        return np.unique(_all_edges(self.triangles), axis=0)


def _all_edges(F: np.ndarray) -> np.ndarray:
    e = np.concatenate([F[:, [0, 1]], F[:, [1, 2]], F[:, [2, 0]]])
    return np.sort(e, axis=1)


def depth_to_vertices(dm: DepthMap, roi: ROI | None = None) -> VertexGrid:
    """Back-project every valid depth pixel through its center; drop points outside ``roi``."""
    centers = pixel_centers(dm.width, dm.height)
    dirs = backproject(dm.intrinsics, centers).xyz
    if not dm.distortion.is_zero:
        dirs[..., :2] = undistort(dm.distortion, dirs[..., :2])
    d = np.where(dm.valid, dm.depth, 0.0)
    pts = dirs * d[..., None]
    valid = dm.valid.copy()
    if roi is not None:
        valid &= roi.contains(pts)
    pts[~valid] = np.nan
    return VertexGrid(pts, valid)


def edge_vertical_angle(v1, v2) -> float:
    """Angle in degrees between the edge ``v1 -> v2`` and the camera XY-plane."""
    d = np.asarray(v2, dtype=float) - np.asarray(v1, dtype=float)
    if not np.any(d):
        raise DomainError("identical vertices have no edge angle")
    return float(_vertical_angles(d))


def _vertical_angles(d: np.ndarray) -> np.ndarray:
    return np.degrees(np.arctan2(np.abs(d[..., 2]), np.hypot(d[..., 0], d[..., 1])))


def build_object_mesh(grid: VertexGrid, max_angle_deg: float = 15.0) -> TriangleMesh:
    """Triangulate the vertex grid.

    Each 2x2 cell is split along its top-left to bottom-right diagonal; a
    triangle survives when its three vertices are valid and all three edges
    are no steeper than ``max_angle_deg``.
    """
    P, valid = grid.points, grid.valid
    H, W = valid.shape
    if H < 2 or W < 2:
        return TriangleMesh.empty()
    idx = np.full((H, W), -1, dtype=np.int64)
    idx[valid] = np.arange(int(valid.sum()))

    def ok(a, b):
        with np.errstate(invalid="ignore"):
            return _vertical_angles(b - a) <= max_angle_deg

    A, B, C, D = P[:-1, :-1], P[:-1, 1:], P[1:, :-1], P[1:, 1:]
    vA, vB, vC, vD = valid[:-1, :-1], valid[:-1, 1:], valid[1:, :-1], valid[1:, 1:]
    diag = ok(A, D)
    upper = vA & vB & vD & ok(A, B) & ok(B, D) & diag
    lower = vA & vC & vD & ok(D, C) & ok(C, A) & diag
    iA, iB, iC, iD = idx[:-1, :-1], idx[:-1, 1:], idx[1:, :-1], idx[1:, 1:]
    t_up = np.stack([iA, iB, iD], axis=-1)
    t_lo = np.stack([iA, iD, iC], axis=-1)
    # interleave per cell so triangle order follows the raster scan
    tris = np.stack([t_up, t_lo], axis=2).reshape(-1, 3)
    keep = np.stack([upper, lower], axis=2).reshape(-1)
    F = tris[keep]
    V = P[valid]
    if len(F):
        a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
        F = F[area > MIN_TRIANGLE_AREA]
    rows, cols = np.nonzero(valid)
    src = np.stack([cols, rows], axis=-1)
    return TriangleMesh(V, F, source_pixels=src)


def find_boundary_edges(mesh: TriangleMesh) -> np.ndarray:
    """Edges used by exactly one triangle, as sorted ``(a, b)`` index pairs."""
    if mesh.n_triangles == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = _all_edges(mesh.triangles)
    n = np.int64(mesh.n_vertices)
    keys, counts = np.unique(e[:, 0] * n + e[:, 1], return_counts=True)
    keys = keys[counts == 1]
    return np.stack([keys // n, keys % n], axis=1)


def build_uncertainty_mesh(mesh: TriangleMesh, camera_origin, ground_z: float) -> TriangleMesh:
    """Curtain mesh hanging from each boundary edge down to the ground plane.

    Boundary vertices are pushed along their ray from ``camera_origin`` until
    ``Z == ground_z``; each edge ``(a, b)`` with projections ``(a', b')`` gives
    triangles ``(a, b, a')`` and ``(b, b', a')``.
    """
    edges = find_boundary_edges(mesh)
    if len(edges) == 0:
        return TriangleMesh.empty()
    o = np.asarray(camera_origin, dtype=float).reshape(3)
    V = mesh.vertices
    z = V[edges, 2]
    projectable = np.all((z - o[2] > 0) & (z < ground_z), axis=1)
    skipped = int((~projectable).sum())
    if skipped:
        warnings.warn(f"{skipped} boundary edges at or below the ground plane were skipped", stacklevel=2)
    edges = edges[projectable]
    if len(edges) == 0:
        return TriangleMesh.empty()
    parents, local = np.unique(edges, return_inverse=True)
    local = local.reshape(-1, 2)
    top = V[parents]
    scale = (ground_z - o[2]) / (top[:, 2] - o[2])
    bottom = o + scale[:, None] * (top - o)
    bottom[:, 2] = ground_z
    k = len(parents)
    verts = np.concatenate([top, bottom])
    a, b = local[:, 0], local[:, 1]
    t1 = np.stack([a, b, a + k], axis=-1)
    t2 = np.stack([b, b + k, a + k], axis=-1)
    F = np.stack([t1, t2], axis=1).reshape(-1, 3)
    return TriangleMesh(verts, F, parent_vertex=np.concatenate([parents, parents]))


def connected_components(mesh: TriangleMesh) -> int:
    """Number of vertex-connected triangle groups."""
    if mesh.n_triangles == 0:
        return 0
    e = _all_edges(mesh.triangles)
    n = mesh.n_vertices
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, labels = _cc(g, directed=False)
    return len(np.unique(labels[np.unique(mesh.triangles)]))


def mesh_from_depth(dm: DepthMap, roi: ROI | None, max_angle_deg: float = 15.0) -> TriangleMesh:
    return build_object_mesh(depth_to_vertices(dm, roi), max_angle_deg)
