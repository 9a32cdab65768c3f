"""BVH-accelerated ray/triangle queries.

The hierarchy is a binned surface-area-heuristic tree (16 bins per axis,
at most 4 triangles per leaf) stored as flat arrays so the traversal kernels
can be compiled with numba and run without the GIL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from ._parallel import for_chunks

DET_EPS = 1e-12
BARY_EPS = 1e-10
TIE_EPS = 1e-12
SELF_HIT_EPS = 1e-4
LEAF_SIZE = 4
N_BINS = 16
_BOX_PAD = 1e-9


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = np.inf

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ValueError("ray direction must be unit length")
        if not (0.0 <= self.t_min < self.t_max):
            raise ValueError(f"invalid ray interval [{self.t_min}, {self.t_max}]")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def towards(cls, origin, target, t_min: float = 0.0, t_max: float = np.inf) -> "Ray":
        origin = np.asarray(origin, dtype=float)
        d = np.asarray(target, dtype=float) - origin
        return cls(origin, d / np.linalg.norm(d), t_min, t_max)


@dataclass(frozen=True)
class Hit:
    t: float
    triangle_id: int
    barycentric: tuple
    point: np.ndarray


@dataclass(frozen=True, eq=False)
class HitBatch:
    """Vectorized query result; ``triangle_id == -1`` marks a miss (``t`` is inf)."""

    t: np.ndarray
    triangle_id: np.ndarray
    barycentric: np.ndarray
    points: np.ndarray

    @property
    def hit(self) -> np.ndarray:
        return self.triangle_id >= 0


@dataclass(frozen=True, eq=False)
class AccelStructure:
    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray  # child index for inner nodes, first primitive for leaves
    node_count: np.ndarray  # 0 for inner nodes
    tri_v0: np.ndarray  # triangle data in leaf order
    tri_e1: np.ndarray
    tri_e2: np.ndarray
    prim_ids: np.ndarray  # leaf-order position -> original triangle id
    depth: int
    n_triangles: int

    @property
    def n_nodes(self) -> int:
        return len(self.node_count)

    def leaves(self):
        return np.flatnonzero(self.node_count > 0)


# ---------------------------------------------------------------------------
# construction


@numba.njit(cache=True)
def _bin_index(c, cmin, ext, nbins):
    b = int(nbins * (c - cmin) / ext)
    if b >= nbins:
        b = nbins - 1
    if b < 0:
        b = 0
    return b


@numba.njit(cache=True)
def _half_area(mn, mx):
    dx = mx[0] - mn[0]
    dy = mx[1] - mn[1]
    dz = mx[2] - mn[2]
    if dx < 0.0 or dy < 0.0 or dz < 0.0:
        return 0.0
    return dx * dy + dy * dz + dz * dx


@numba.njit(cache=True)
def _build_kernel(bmin, bmax, cent, leaf_size, nbins):
    n = bmin.shape[0]
    order = np.arange(n)
    cap = max(2 * n, 1)
    node_min = np.empty((cap, 3))
    node_max = np.empty((cap, 3))
    node_left = np.zeros(cap, dtype=np.int64)
    node_count = np.zeros(cap, dtype=np.int64)
    node_depth = np.zeros(cap, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_start = np.empty(cap, dtype=np.int64)
    st_end = np.empty(cap, dtype=np.int64)
    used = 1
    sp = 0
    st_node[0] = 0
    st_start[0] = 0
    st_end[0] = n
    sp = 1
    max_depth = 1
    bin_cnt = np.zeros(nbins, dtype=np.int64)
    bin_min = np.empty((nbins, 3))
    bin_max = np.empty((nbins, 3))
    right_area = np.empty(nbins)
    right_cnt = np.empty(nbins, dtype=np.int64)
    acc_min = np.empty(3)
    acc_max = np.empty(3)
    while sp > 0:
        sp -= 1
        node = st_node[sp]
        start = st_start[sp]
        end = st_end[sp]
        if node_depth[node] + 1 > max_depth:
            max_depth = node_depth[node] + 1
        cmin = np.full(3, np.inf)
        cmax = np.full(3, -np.inf)
        for k in range(3):
            node_min[node, k] = np.inf
            node_max[node, k] = -np.inf
        for i in range(start, end):
            p = order[i]
            for k in range(3):
                if bmin[p, k] < node_min[node, k]:
                    node_min[node, k] = bmin[p, k]
                if bmax[p, k] > node_max[node, k]:
                    node_max[node, k] = bmax[p, k]
                if cent[p, k] < cmin[k]:
                    cmin[k] = cent[p, k]
                if cent[p, k] > cmax[k]:
                    cmax[k] = cent[p, k]
        cnt = end - start
        if cnt <= leaf_size:
            node_left[node] = start
            node_count[node] = cnt
            continue
        best_cost = np.inf
        best_axis = -1
        best_split = -1
        for axis in range(3):
            ext = cmax[axis] - cmin[axis]
            if ext <= 0.0:
                continue
            bin_cnt[:] = 0
            bin_min[:, :] = np.inf
            bin_max[:, :] = -np.inf
            for i in range(start, end):
                p = order[i]
                b = _bin_index(cent[p, axis], cmin[axis], ext, nbins)
                bin_cnt[b] += 1
                for k in range(3):
                    if bmin[p, k] < bin_min[b, k]:
                        bin_min[b, k] = bmin[p, k]
                    if bmax[p, k] > bin_max[b, k]:
                        bin_max[b, k] = bmax[p, k]
            acc_min[:] = np.inf
            acc_max[:] = -np.inf
            c = 0
            for b in range(nbins - 1, 0, -1):
                c += bin_cnt[b]
                for k in range(3):
                    acc_min[k] = min(acc_min[k], bin_min[b, k])
                    acc_max[k] = max(acc_max[k], bin_max[b, k])
                right_cnt[b] = c
                right_area[b] = _half_area(acc_min, acc_max)
            acc_min[:] = np.inf
            acc_max[:] = -np.inf
            c = 0
            for s in range(nbins - 1):
                c += bin_cnt[s]
                for k in range(3):
                    acc_min[k] = min(acc_min[k], bin_min[s, k])
                    acc_max[k] = max(acc_max[k], bin_max[s, k])
                rc = right_cnt[s + 1]
                if c == 0 or rc == 0:
                    continue
                cost = _half_area(acc_min, acc_max) * c + right_area[s + 1] * rc
                if cost < best_cost:
                    best_cost = cost
                    best_axis = axis
                    best_split = s
        mid = (start + end) // 2
        if best_axis >= 0:
            ext = cmax[best_axis] - cmin[best_axis]
            i = start
            j = end - 1
            while i <= j:
                if _bin_index(cent[order[i], best_axis], cmin[best_axis], ext, nbins) <= best_split:
                    i += 1
                else:
                    tmp = order[i]
                    order[i] = order[j]
                    order[j] = tmp
                    j -= 1
            if start < i < end:
                mid = i
        left = used
        used += 2
        node_left[node] = left
        node_count[node] = 0
        node_depth[left] = node_depth[node] + 1
        node_depth[left + 1] = node_depth[node] + 1
        st_node[sp] = left + 1
        st_start[sp] = mid
        st_end[sp] = end
        sp += 1
        st_node[sp] = left
        st_start[sp] = start
        st_end[sp] = mid
        sp += 1
    return order, node_min[:used], node_max[:used], node_left[:used], node_count[:used], max_depth


def build_arrays(vertices, triangles) -> AccelStructure:
    V = np.ascontiguousarray(vertices, dtype=np.float64).reshape(-1, 3)
    F = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
    n = len(F)
    if n == 0:
        z3 = np.zeros((0, 3))
        zi = np.zeros(0, dtype=np.int64)
        return AccelStructure(z3, z3, zi, zi, z3, z3, z3, zi, 0, 0)
    a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    lo = np.minimum(np.minimum(a, b), c)
    hi = np.maximum(np.maximum(a, b), c)
    pad = _BOX_PAD * (1.0 + np.maximum(np.abs(lo), np.abs(hi)))
    lo = lo - pad
    hi = hi + pad
    cent = (lo + hi) * 0.5
    order, nmin, nmax, nleft, ncount, depth = _build_kernel(lo, hi, cent, LEAF_SIZE, N_BINS)
    return AccelStructure(
        node_min=np.ascontiguousarray(nmin),
        node_max=np.ascontiguousarray(nmax),
        node_left=np.ascontiguousarray(nleft),
        node_count=np.ascontiguousarray(ncount),
        tri_v0=np.ascontiguousarray(a[order]),
        tri_e1=np.ascontiguousarray((b - a)[order]),
        tri_e2=np.ascontiguousarray((c - a)[order]),
        prim_ids=np.ascontiguousarray(order),
        depth=int(depth),
        n_triangles=n,
    )


def build(mesh) -> AccelStructure:
    """Build the hierarchy over a :class:`~meshreg.mesh.TriangleMesh` (may be empty)."""
    return build_arrays(mesh.vertices, mesh.triangles)


# ---------------------------------------------------------------------------
# kernels


@numba.njit(inline="always")
def _mt(ox, oy, oz, dx, dy, dz, v0, e1, e2, i):
    e1x, e1y, e1z = e1[i, 0], e1[i, 1], e1[i, 2]
    e2x, e2y, e2z = e2[i, 0], e2[i, 1], e2[i, 2]
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < DET_EPS:
        return np.nan, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[i, 0]
    sy = oy - v0[i, 1]
    sz = oz - v0[i, 2]
    u = (sx * px + sy * py + sz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return np.nan, 0.0, 0.0
    qx = sy * e1z - sz * e1y
    qy = sz * e1x - sx * e1z
    qz = sx * e1y - sy * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return np.nan, 0.0, 0.0
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    return t, u, v


@numba.njit(inline="always")
def _better(t, pid, best_t, best_id):
    if best_id < 0:
        return True
    if t < best_t - TIE_EPS:
        return True
    if abs(t - best_t) <= TIE_EPS and pid < best_id:
        return True
    return False


@numba.njit(inline="always")
def _box(nmin, nmax, node, ox, oy, oz, ix, iy, iz, t0, t1):
    a = (nmin[node, 0] - ox) * ix
    b = (nmax[node, 0] - ox) * ix
    lo = min(a, b)
    hi = max(a, b)
    a = (nmin[node, 1] - oy) * iy
    b = (nmax[node, 1] - oy) * iy
    lo = max(lo, min(a, b))
    hi = min(hi, max(a, b))
    a = (nmin[node, 2] - oz) * iz
    b = (nmax[node, 2] - oz) * iz
    lo = max(lo, min(a, b))
    hi = min(hi, max(a, b))
    if lo <= hi and hi >= t0 and lo <= t1:
        return lo
    return np.inf


@numba.njit(inline="always")
def _inv(d):
    if d == 0.0:
        return 1e300
    return 1.0 / d


@numba.njit(nogil=True, cache=True)
def _first_hit_kernel(nmin, nmax, nleft, ncount, v0, e1, e2, prim, depth,
                      orig, dirs, tmin, tmax, out_t, out_id, out_u, out_v, out_tests):
    stack = np.empty(depth + 2, dtype=np.int64)
    stack_t = np.empty(depth + 2)
    for r in range(orig.shape[0]):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix, iy, iz = _inv(dx), _inv(dy), _inv(dz)
        t0 = tmin[r]
        t1 = tmax[r]
        best_t = t1
        best_id = -1
        best_u = 0.0
        best_v = 0.0
        tests = 0
        sp = 0
        if nmin.shape[0] > 0:
            tn = _box(nmin, nmax, 0, ox, oy, oz, ix, iy, iz, t0, t1)
            if tn < np.inf:
                stack[0] = 0
                stack_t[0] = tn
                sp = 1
        while sp > 0:
            sp -= 1
            node = stack[sp]
            if stack_t[sp] > best_t + TIE_EPS:
                continue
            cnt = ncount[node]
            if cnt > 0:
                first = nleft[node]
                for i in range(first, first + cnt):
                    tests += 1
                    t, u, v = _mt(ox, oy, oz, dx, dy, dz, v0, e1, e2, i)
                    if t >= t0 and t <= t1:
                        pid = prim[i]
                        if _better(t, pid, best_t, best_id):
                            best_t = t
                            best_id = pid
                            best_u = u
                            best_v = v
                continue
            lc = nleft[node]
            rc = lc + 1
            lim = best_t + TIE_EPS
            tl = _box(nmin, nmax, lc, ox, oy, oz, ix, iy, iz, t0, lim)
            tr = _box(nmin, nmax, rc, ox, oy, oz, ix, iy, iz, t0, lim)
            # push the farther child first so the nearer one is visited first
            if tl <= tr:
                if tr < np.inf:
                    stack[sp] = rc
                    stack_t[sp] = tr
                    sp += 1
                if tl < np.inf:
                    stack[sp] = lc
                    stack_t[sp] = tl
                    sp += 1
            else:
                if tl < np.inf:
                    stack[sp] = lc
                    stack_t[sp] = tl
                    sp += 1
                if tr < np.inf:
                    stack[sp] = rc
                    stack_t[sp] = tr
                    sp += 1
        out_t[r] = best_t if best_id >= 0 else np.inf
        out_id[r] = best_id
        out_u[r] = best_u
        out_v[r] = best_v
        out_tests[r] = tests


@numba.njit(nogil=True, cache=True)
def _any_hit_kernel(nmin, nmax, nleft, ncount, v0, e1, e2, depth, orig, dirs, tlo, thi, out):
    stack = np.empty(depth + 2, dtype=np.int64)
    for r in range(orig.shape[0]):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix, iy, iz = _inv(dx), _inv(dy), _inv(dz)
        a = tlo[r]
        b = thi[r]
        found = False
        sp = 0
        if a <= b and nmin.shape[0] > 0 and _box(nmin, nmax, 0, ox, oy, oz, ix, iy, iz, a, b) < np.inf:
            stack[0] = 0
            sp = 1
        while sp > 0 and not found:
            sp -= 1
            node = stack[sp]
            cnt = ncount[node]
            if cnt > 0:
                first = nleft[node]
                for i in range(first, first + cnt):
                    t, u, v = _mt(ox, oy, oz, dx, dy, dz, v0, e1, e2, i)
                    if t >= a and t <= b:
                        found = True
                        break
                continue
            lc = nleft[node]
            if _box(nmin, nmax, lc, ox, oy, oz, ix, iy, iz, a, b) < np.inf:
                stack[sp] = lc
                sp += 1
            if _box(nmin, nmax, lc + 1, ox, oy, oz, ix, iy, iz, a, b) < np.inf:
                stack[sp] = lc + 1
                sp += 1
        out[r] = found


@numba.njit(nogil=True, cache=True)
def _brute_kernel(v0, e1, e2, prim, orig, dirs, tmin, tmax, out_t, out_id, out_u, out_v):
    n = v0.shape[0]
    for r in range(orig.shape[0]):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        best_t = tmax[r]
        best_id = -1
        best_u = 0.0
        best_v = 0.0
        for i in range(n):
            t, u, v = _mt(ox, oy, oz, dx, dy, dz, v0, e1, e2, i)
            if t >= tmin[r] and t <= tmax[r]:
                pid = prim[i]
                if _better(t, pid, best_t, best_id):
                    best_t = t
                    best_id = pid
                    best_u = u
                    best_v = v
        out_t[r] = best_t if best_id >= 0 else np.inf
        out_id[r] = best_id
        out_u[r] = best_u
        out_v[r] = best_v


# ---------------------------------------------------------------------------
# public queries


def _ray_arrays(origins, directions):
    D = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
    O = np.asarray(origins, dtype=np.float64)
    if O.size == 3:
        O = np.broadcast_to(O.reshape(3), D.shape)
    return np.ascontiguousarray(O.reshape(-1, 3)), D


def _interval(x, n):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        return np.full(n, float(x))
    return np.ascontiguousarray(x.reshape(n))


def _finish(O, D, t, tid, u, v, shape) -> HitBatch:
    bary = np.stack([1.0 - u - v, u, v], axis=-1)
    pts = O + D * np.where(tid >= 0, t, np.nan)[:, None]
    return HitBatch(
        t=t.reshape(shape),
        triangle_id=tid.reshape(shape),
        barycentric=bary.reshape(shape + (3,)),
        points=pts.reshape(shape + (3,)),
    )


def first_hits(accel: AccelStructure, origins, directions, t_min=0.0, t_max=np.inf,
               workers: int | None = None, return_tests: bool = False):
    """Nearest hit for every ray; directions need not be unit length (``t`` is in their units)."""
    shape = np.shape(directions)[:-1]
    O, D = _ray_arrays(origins, directions)
    n = len(D)
    tmin = _interval(t_min, n)
    tmax = _interval(t_max, n)
    out_t = np.empty(n)
    out_id = np.empty(n, dtype=np.int64)
    out_u = np.empty(n)
    out_v = np.empty(n)
    tests = np.zeros(n, dtype=np.int64)
    a = accel

    def run(s, e):
        _first_hit_kernel(a.node_min, a.node_max, a.node_left, a.node_count, a.tri_v0, a.tri_e1,
                          a.tri_e2, a.prim_ids, a.depth, O[s:e], D[s:e], tmin[s:e], tmax[s:e],
                          out_t[s:e], out_id[s:e], out_u[s:e], out_v[s:e], tests[s:e])

    for_chunks(n, run, workers)
    hits = _finish(O, D, out_t, out_id, out_u, out_v, shape)
    if return_tests:
        return hits, tests.reshape(shape)
    return hits


def first_hits_brute(accel: AccelStructure, origins, directions, t_min=0.0, t_max=np.inf,
                     workers: int | None = None) -> HitBatch:
    """Exhaustive per-triangle reference for :func:`first_hits`."""
    shape = np.shape(directions)[:-1]
    O, D = _ray_arrays(origins, directions)
    n = len(D)
    tmin = _interval(t_min, n)
    tmax = _interval(t_max, n)
    out_t = np.empty(n)
    out_id = np.empty(n, dtype=np.int64)
    out_u = np.empty(n)
    out_v = np.empty(n)
    a = accel

    def run(s, e):
        _brute_kernel(a.tri_v0, a.tri_e1, a.tri_e2, a.prim_ids, O[s:e], D[s:e], tmin[s:e],
                      tmax[s:e], out_t[s:e], out_id[s:e], out_u[s:e], out_v[s:e])

    for_chunks(n, run, workers)
    return _finish(O, D, out_t, out_id, out_u, out_v, shape)


def any_hits(accel: AccelStructure, origins, directions, t_lo, t_hi, workers: int | None = None) -> np.ndarray:
    """True where some triangle is hit with ``t`` in the closed interval ``[t_lo, t_hi]``."""
    shape = np.shape(directions)[:-1]
    O, D = _ray_arrays(origins, directions)
    n = len(D)
    lo = _interval(t_lo, n)
    hi = _interval(t_hi, n)
    out = np.zeros(n, dtype=np.bool_)
    a = accel

    def run(s, e):
        _any_hit_kernel(a.node_min, a.node_max, a.node_left, a.node_count, a.tri_v0, a.tri_e1,
                        a.tri_e2, a.depth, O[s:e], D[s:e], lo[s:e], hi[s:e], out[s:e])

    for_chunks(n, run, workers)
    return out.reshape(shape)


def intersect_first(accel: AccelStructure, ray: Ray) -> Hit | None:
    h = first_hits(accel, ray.origin, ray.direction[None], ray.t_min, ray.t_max, workers=1)
    if h.triangle_id[0] < 0:
        return None
    return Hit(
        t=float(h.t[0]),
        triangle_id=int(h.triangle_id[0]),
        barycentric=tuple(float(b) for b in h.barycentric[0]),
        point=h.points[0].copy(),
    )


def intersect_before(accel: AccelStructure, ray: Ray, t_limit: float, epsilon: float = SELF_HIT_EPS) -> bool:
    """Any intersection with ``t`` in ``[t_min + epsilon, t_limit - epsilon]``."""
    if not t_limit > 0:
        raise ValueError("t_limit must be positive")
    return bool(
        any_hits(accel, ray.origin, ray.direction[None], ray.t_min + epsilon, t_limit - epsilon, workers=1)[0]
    )
