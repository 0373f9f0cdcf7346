"""Triangle meshes, an axis-aligned BVH and ray queries.

Traversal runs in numba kernels parallelised over rays. Every ray is
independent, so results do not depend on the thread count.
"""
from dataclasses import dataclass, field

import numba
import numpy as np

RAY_EPS = 1e-4
LEAF_SIZE = 4


@dataclass
class Hit:
    """Nearest-hit record for a batch of rays; ``tri == -1`` marks a miss."""

    t: np.ndarray
    tri: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    position: np.ndarray
    normal: np.ndarray
    uv: np.ndarray

    @property
    def mask(self):
        return self.tri >= 0


@dataclass
class BVH:
    node_min: np.ndarray
    node_max: np.ndarray
    # internal nodes: left child index, right child index; leaves: -1, -1
    left: np.ndarray
    right: np.ndarray
    start: np.ndarray
    count: np.ndarray
    order: np.ndarray


@dataclass
class Mesh:
    positions: np.ndarray
    normals: np.ndarray
    uvs: np.ndarray
    faces: np.ndarray
    _bvh: BVH = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.normals = self.normals / np.linalg.norm(self.normals, axis=-1, keepdims=True)
        self.uvs = np.clip(np.asarray(self.uvs, dtype=np.float64), 0.0, 1.0)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        nv = len(self.positions)
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError("faces must be (F, 3)")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= nv):
            raise ValueError("face index out of range")
        if len(self.normals) != nv or len(self.uvs) != nv:
            raise ValueError("positions, normals and uvs must have the same length")

    @property
    def n_triangles(self):
        return len(self.faces)

    @property
    def bvh(self):
        if self._bvh is None:
            self._bvh = build_bvh(self.positions[self.faces])
        return self._bvh

    def triangle_arrays(self):
        tri = self.positions[self.faces]
        return tri[:, 0], tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]


def build_bvh(tris):
    """Median-split BVH over triangles given as (F, 3, 3) vertex arrays."""
    lo = tris.min(axis=1)
    hi = tris.max(axis=1)
    centroid = tris.mean(axis=1)
    order = np.arange(len(tris))
    node_min, node_max, left, right, start, count = [], [], [], [], [], []

    def new_node(idx, begin):
        node_min.append(lo[idx].min(axis=0))
        node_max.append(hi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        start.append(begin)
        count.append(len(idx))
        return len(node_min) - 1

    # iterative build; each stack entry is (node id, begin, end)
    root = new_node(order, 0)
    stack = [(root, 0, len(order))]
    while stack:
        node, begin, end = stack.pop()
        if end - begin <= LEAF_SIZE:
            continue
        idx = order[begin:end]
        c = centroid[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        idx = idx[np.argsort(c[:, axis], kind="stable")]
        order[begin:end] = idx
        mid = begin + (end - begin) // 2
        l_id = new_node(order[begin:mid], begin)
        r_id = new_node(order[mid:end], mid)
        left[node] = l_id
        right[node] = r_id
        count[node] = 0
        stack.append((l_id, begin, mid))
        stack.append((r_id, mid, end))

    return BVH(np.array(node_min), np.array(node_max), np.array(left, dtype=np.int64),
               np.array(right, dtype=np.int64), np.array(start, dtype=np.int64),
               np.array(count, dtype=np.int64), order.astype(np.int64))


@numba.njit(cache=True, inline="always")
def _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k):
    # Moller-Trumbore; returns (t, b1, b2) with t = inf on a miss
    px = dy * e2[k, 2] - dz * e2[k, 1]
    py = dz * e2[k, 0] - dx * e2[k, 2]
    pz = dx * e2[k, 1] - dy * e2[k, 0]
    det = e1[k, 0] * px + e1[k, 1] * py + e1[k, 2] * pz
    if det == 0.0:
        return np.inf, 0.0, 0.0
    inv = 1.0 / det
    sx = ox - v0[k, 0]
    sy = oy - v0[k, 1]
    sz = oz - v0[k, 2]
    b1 = (sx * px + sy * py + sz * pz) * inv
    if b1 < 0.0 or b1 > 1.0:
        return np.inf, 0.0, 0.0
    qx = sy * e1[k, 2] - sz * e1[k, 1]
    qy = sz * e1[k, 0] - sx * e1[k, 2]
    qz = sx * e1[k, 1] - sy * e1[k, 0]
    b2 = (dx * qx + dy * qy + dz * qz) * inv
    if b2 < 0.0 or b1 + b2 > 1.0:
        return np.inf, 0.0, 0.0
    t = (e2[k, 0] * qx + e2[k, 1] * qy + e2[k, 2] * qz) * inv
    return t, b1, b2


@numba.njit(cache=True, inline="always")
def _box_hit(ox, oy, oz, ix, iy, iz, bmin, bmax, n, tmin, tmax):
    t0 = tmin
    t1 = tmax
    for a in range(3):
        if a == 0:
            o, inv = ox, ix
        elif a == 1:
            o, inv = oy, iy
        else:
            o, inv = oz, iz
        ta = (bmin[n, a] - o) * inv
        tb = (bmax[n, a] - o) * inv
        if ta > tb:
            ta, tb = tb, ta
        if ta != ta:  # 0 * inf on a slab boundary
            ta = -np.inf
        if tb != tb:
            tb = np.inf
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
        if t0 > t1:
            return False
    return True


@numba.njit(cache=True, parallel=True)
def _trace(orig, dirs, tmin, tmax, any_hit, v0, e1, e2, nmin, nmax, left, right, start, count, order):
    n_rays = orig.shape[0]
    out_t = np.full(n_rays, np.inf)
    out_tri = np.full(n_rays, -1, dtype=np.int64)
    out_b1 = np.zeros(n_rays)
    out_b2 = np.zeros(n_rays)
    for r in numba.prange(n_rays):
        ox, oy, oz = orig[r, 0], orig[r, 1], orig[r, 2]
        dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
        ix = 1.0 / dx if dx != 0.0 else np.inf
        iy = 1.0 / dy if dy != 0.0 else np.inf
        iz = 1.0 / dz if dz != 0.0 else np.inf
        best = tmax[r]
        best_tri = -1
        bb1 = 0.0
        bb2 = 0.0
        stack = np.empty(64, dtype=np.int64)
        sp = 0
        stack[sp] = 0
        sp += 1
        done = False
        while sp > 0 and not done:
            sp -= 1
            node = stack[sp]
            if not _box_hit(ox, oy, oz, ix, iy, iz, nmin, nmax, node, tmin[r], best):
                continue
            if left[node] < 0:
                for s in range(start[node], start[node] + count[node]):
                    k = order[s]
                    t, b1, b2 = _tri_hit(ox, oy, oz, dx, dy, dz, v0, e1, e2, k)
                    # strict comparison keeps the lowest-order triangle on exact ties
                    if t > tmin[r] and (t < best or (t == best and best_tri >= 0 and k < best_tri)):
                        best = t
                        best_tri = k
                        bb1 = b1
                        bb2 = b2
                        if any_hit:
                            done = True
                            break
            else:
                stack[sp] = left[node]
                sp += 1
                stack[sp] = right[node]
                sp += 1
        out_t[r] = best
        out_tri[r] = best_tri
        out_b1[r] = bb1
        out_b2[r] = bb2
    return out_t, out_tri, out_b1, out_b2


def _prepare_rays(origins, directions, tmax):
    o = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
    d = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
    o = np.broadcast_to(o, d.shape) if len(o) == 1 else o
    o = np.ascontiguousarray(o)
    n = len(d)
    tmin = np.full(n, RAY_EPS)
    tmax = np.full(n, np.inf) if tmax is None else np.ascontiguousarray(np.broadcast_to(tmax, (n,)), dtype=np.float64)
    return o, d, tmin, tmax


def _run(mesh, origins, directions, tmax, any_hit):
    o, d, tmin, tmx = _prepare_rays(origins, directions, tmax)
    v0, e1, e2 = mesh.triangle_arrays()
    b = mesh.bvh
    return _trace(o, d, tmin, tmx, any_hit, np.ascontiguousarray(v0), np.ascontiguousarray(e1),
                  np.ascontiguousarray(e2), b.node_min, b.node_max, b.left, b.right, b.start, b.count, b.order)


def interpolate_hit(mesh: Mesh, origins, directions, t, tri, b1, b2, shape):
    mask = tri >= 0
    safe = np.where(mask, tri, 0)
    f = mesh.faces[safe]
    w0 = (1.0 - b1 - b2)[:, None]
    nrm = w0 * mesh.normals[f[:, 0]] + b1[:, None] * mesh.normals[f[:, 1]] + b2[:, None] * mesh.normals[f[:, 2]]
    nrm = nrm / np.maximum(np.linalg.norm(nrm, axis=-1, keepdims=True), 1e-12)
    uv = w0 * mesh.uvs[f[:, 0]] + b1[:, None] * mesh.uvs[f[:, 1]] + b2[:, None] * mesh.uvs[f[:, 2]]
    o = np.broadcast_to(np.asarray(origins, dtype=np.float64).reshape(-1, 3), (len(t), 3))
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    pos = o + np.where(mask, t, 0.0)[:, None] * d
    m3 = mask[:, None]
    return Hit(t.reshape(shape), tri.reshape(shape), b1.reshape(shape), b2.reshape(shape),
               np.where(m3, pos, 0.0).reshape(shape + (3,)), np.where(m3, nrm, 0.0).reshape(shape + (3,)),
               np.where(m3, uv, 0.0).reshape(shape + (2,)))


def ray_intersect(mesh: Mesh, origins, directions) -> Hit:
    """Nearest hit with t > RAY_EPS for every ray; directions must be unit length."""
    shape = np.shape(directions)[:-1]
    t, tri, b1, b2 = _run(mesh, origins, directions, None, False)
    return interpolate_hit(mesh, origins, directions, t, tri, b1, b2, shape)


def occluded(mesh: Mesh, origins, directions, tmax=None):
    """Boolean shadow-ray query: any hit in (RAY_EPS, tmax)."""
    shape = np.shape(directions)[:-1]
    _, tri, _, _ = _run(mesh, origins, directions, tmax, True)
    return (tri >= 0).reshape(shape)


def ray_intersect_brute_force(mesh: Mesh, origins, directions, chunk=256):
    """All-triangles reference intersection used to validate the BVH."""
    o = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    o = np.broadcast_to(o, d.shape)
    v0, e1, e2 = mesh.triangle_arrays()
    n = len(d)
    best_t = np.full(n, np.inf)
    best_tri = np.full(n, -1, dtype=np.int64)
    best_b1 = np.zeros(n)
    best_b2 = np.zeros(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        for s in range(0, n, chunk):
            oo = o[s:s + chunk, None, :]
            dd = d[s:s + chunk, None, :]
            dx, dy, dz = dd[..., 0], dd[..., 1], dd[..., 2]
            px = dy * e2[:, 2] - dz * e2[:, 1]
            py = dz * e2[:, 0] - dx * e2[:, 2]
            pz = dx * e2[:, 1] - dy * e2[:, 0]
            det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
            inv = 1.0 / det
            sx = oo[..., 0] - v0[:, 0]
            sy = oo[..., 1] - v0[:, 1]
            sz = oo[..., 2] - v0[:, 2]
            b1 = (sx * px + sy * py + sz * pz) * inv
            qx = sy * e1[:, 2] - sz * e1[:, 1]
            qy = sz * e1[:, 0] - sx * e1[:, 2]
            qz = sx * e1[:, 1] - sy * e1[:, 0]
            b2 = (dx * qx + dy * qy + dz * qz) * inv
            t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv
            ok = (det != 0) & (b1 >= 0) & (b1 <= 1) & (b2 >= 0) & (b1 + b2 <= 1) & (t > RAY_EPS)
            t = np.where(ok, t, np.inf)
            k = np.argmin(t, axis=1)  # first index among exact ties
            rows = np.arange(len(k))
            tt = t[rows, k]
            hit = np.isfinite(tt)
            best_t[s:s + chunk] = tt
            best_tri[s:s + chunk] = np.where(hit, k, -1)
            best_b1[s:s + chunk] = np.where(hit, b1[rows, k], 0.0)
            best_b2[s:s + chunk] = np.where(hit, b2[rows, k], 0.0)
    return interpolate_hit(mesh, o, d, best_t, best_tri, best_b1, best_b2, (n,))
