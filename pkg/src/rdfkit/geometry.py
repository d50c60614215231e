"""Ground-truth distance oracles, training-set sampling and error metrics."""
from __future__ import annotations

import csv
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import AxisBox
from .kinematics import Pose

NEAR_THRESHOLD = 0.03

# fixed, non-axis-aligned ray directions for inside/outside parity votes
_RAY_DIRS = np.array([
    [1.0, math.sqrt(2.0) - 1.0, math.pi - 3.0],
    [-(math.sqrt(3.0) - 1.0), 1.0, math.e - 2.5],
    [math.sqrt(5.0) - 2.0, -(math.sqrt(7.0) - 2.5), 1.0],
])
_RAY_DIRS /= np.linalg.norm(_RAY_DIRS, axis=1, keepdims=True)

_PAIR_CHUNK = 2_000_000  # point-triangle pairs per vectorized block


def _points(p) -> tuple:
    p = np.asarray(p, dtype=float)
    return p.reshape(-1, 3), p.ndim == 1


def _ret(values, single):
    return float(values[0]) if single else values


# ----------------------------------------------------------------------------
# analytic primitives


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.reshape(self.center, 3)))
        if not self.radius > 0:
            raise ValueError("sphere radius must be positive")

    def sdf(self, p):
        pts, single = _points(p)
        return _ret(np.linalg.norm(pts - np.array(self.center), axis=1) - self.radius, single)

    def aabb(self) -> AxisBox:
        c = np.array(self.center)
        return AxisBox(tuple(c - self.radius), tuple(c + self.radius))

    def transformed(self, pose: Pose) -> "Sphere":
        return Sphere(tuple(pose.apply(np.array(self.center))), self.radius)

    def area(self) -> float:
        return 4.0 * math.pi * self.radius ** 2

    def sample_surface(self, n: int, rng) -> np.ndarray:
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return np.array(self.center) + self.radius * v


def segment_closest(p, a, b) -> np.ndarray:
    """Closest points on segment ab to each row of ``p``."""
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    return a + t[:, None] * ab


def segment_segment_distance(p1, q1, p2, q2) -> float:
    """Shortest distance between segments p1q1 and p2q2 (both non-degenerate allowed)."""
    p1, q1, p2, q2 = (np.asarray(v, dtype=float) for v in (p1, q1, p2, q2))
    d1, d2, r = q1 - p1, q2 - p2, p1 - p2
    a, e, f = d1 @ d1, d2 @ d2, d2 @ r
    eps = 1e-18
    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, float(np.clip(f / e, 0.0, 1.0))
    else:
        c = d1 @ r
        if e <= eps:
            s, t = float(np.clip(-c / a, 0.0, 1.0)), 0.0
        else:
            b = d1 @ d2
            denom = a * e - b * b
            s = float(np.clip((b * f - c * e) / denom, 0.0, 1.0)) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                s, t = float(np.clip(-c / a, 0.0, 1.0)), 0.0
            elif t > 1.0:
                s, t = float(np.clip((b - c) / a, 0.0, 1.0)), 1.0
    return float(np.linalg.norm((p1 + s * d1) - (p2 + t * d2)))


def capsule_distance(c1: "Capsule", c2: "Capsule") -> float:
    """Signed gap between two capsules; negative when they overlap."""
    return segment_segment_distance(c1.a, c1.b, c2.a, c2.b) - c1.radius - c2.radius


@dataclass(frozen=True)
class Capsule:
    endpoint_a: tuple
    endpoint_b: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "endpoint_a", tuple(float(v) for v in np.reshape(self.endpoint_a, 3)))
        object.__setattr__(self, "endpoint_b", tuple(float(v) for v in np.reshape(self.endpoint_b, 3)))
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        if np.allclose(self.endpoint_a, self.endpoint_b, atol=1e-12, rtol=0.0):
            raise ValueError("capsule endpoints must be distinct")

    @property
    def a(self) -> np.ndarray:
        return np.array(self.endpoint_a)

    @property
    def b(self) -> np.ndarray:
        return np.array(self.endpoint_b)

    def sdf(self, p):
        pts, single = _points(p)
        d = np.linalg.norm(pts - segment_closest(pts, self.a, self.b), axis=1) - self.radius
        return _ret(d, single)

    def aabb(self) -> AxisBox:
        lo = np.minimum(self.a, self.b) - self.radius
        hi = np.maximum(self.a, self.b) + self.radius
        return AxisBox(tuple(lo), tuple(hi))

    def transformed(self, pose: Pose) -> "Capsule":
        return Capsule(tuple(pose.apply(self.a)), tuple(pose.apply(self.b)), self.radius)

    def area(self) -> float:
        length = float(np.linalg.norm(self.b - self.a))
        return 2.0 * math.pi * self.radius * length + 4.0 * math.pi * self.radius ** 2

    def sample_surface(self, n: int, rng) -> np.ndarray:
        a, b, r = self.a, self.b, self.radius
        axis = b - a
        length = np.linalg.norm(axis)
        u = axis / length
        e1, e2 = _orthonormal_pair(u)
        side = 2.0 * math.pi * r * length
        on_side = rng.uniform(size=n) < side / self.area()
        out = np.empty((n, 3))
        ns = int(on_side.sum())
        ang = rng.uniform(0.0, 2.0 * math.pi, size=ns)
        h = rng.uniform(0.0, length, size=ns)
        out[on_side] = a + h[:, None] * u + r * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
        nc = n - ns
        v = rng.normal(size=(nc, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        proj = v @ u
        centers = np.where((proj >= 0.0)[:, None], b, a)
        out[~on_side] = centers + r * v
        return out


def _orthonormal_pair(u: np.ndarray) -> tuple:
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(u, helper)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(u, e1)


@dataclass(frozen=True)
class Box:
    center: tuple
    half_extents: tuple
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(v) for v in np.reshape(self.center, 3)))
        object.__setattr__(self, "half_extents", tuple(float(v) for v in np.reshape(self.half_extents, 3)))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        if min(self.half_extents) <= 0:
            raise ValueError("box half extents must be positive")

    def __eq__(self, other):
        return (
            isinstance(other, Box)
            and self.center == other.center
            and self.half_extents == other.half_extents
            and np.array_equal(self.rotation, other.rotation)
        )

    def __hash__(self):
        return hash((self.center, self.half_extents, self.rotation.tobytes()))

    def sdf(self, p):
        pts, single = _points(p)
        local = (pts - np.array(self.center)) @ self.rotation
        q = np.abs(local) - np.array(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return _ret(outside + inside, single)

    def aabb(self) -> AxisBox:
        ext = np.abs(self.rotation) @ np.array(self.half_extents)
        c = np.array(self.center)
        return AxisBox(tuple(c - ext), tuple(c + ext))

    def transformed(self, pose: Pose) -> "Box":
        return Box(tuple(pose.apply(np.array(self.center))), self.half_extents, pose.rotation @ self.rotation)

    def area(self) -> float:
        x, y, z = self.half_extents
        return 8.0 * (x * y + y * z + x * z)

    def sample_surface(self, n: int, rng) -> np.ndarray:
        h = np.array(self.half_extents)
        face_area = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]] * 2)
        face = rng.choice(6, size=n, p=face_area / face_area.sum())
        local = rng.uniform(-h, h, size=(n, 3))
        ax = face % 3
        sign = np.where(face < 3, 1.0, -1.0)
        local[np.arange(n), ax] = sign * h[ax]
        return local @ self.rotation.T + np.array(self.center)


# ----------------------------------------------------------------------------
# triangle meshes


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        cross = self._cross()
        area2 = np.linalg.norm(cross, axis=1)
        if np.any(area2 <= 2e-12):
            raise ValueError(f"{int(np.sum(area2 <= 2e-12))} degenerate triangle(s) (area <= 1e-12 m^2)")
        object.__setattr__(self, "normals", cross / area2[:, None])
        object.__setattr__(self, "areas", 0.5 * area2)

    def _cross(self):
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return np.cross(b - a, c - a)

    @property
    def corners(self) -> tuple:
        return tuple(self.vertices[self.triangles[:, i]] for i in range(3))

    def is_watertight(self) -> bool:
        """Every undirected edge is shared by exactly two triangles."""
        f = self.triangles
        edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def aabb(self) -> AxisBox:
        return AxisBox(tuple(self.vertices.min(axis=0)), tuple(self.vertices.max(axis=0)))

    def transformed(self, pose: Pose) -> "TriangleMesh":
        return TriangleMesh(pose.apply(self.vertices), self.triangles)

    def area(self) -> float:
        return float(self.areas.sum())

    def sample_surface(self, n: int, rng) -> np.ndarray:
        tri = rng.choice(len(self.triangles), size=n, p=self.areas / self.areas.sum())
        r1 = np.sqrt(rng.uniform(size=n))
        r2 = rng.uniform(size=n)
        a, b, c = (self.vertices[self.triangles[tri, i]] for i in range(3))
        return (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c

    def sdf(self, p):
        return mesh_sdf(self, p)


def closest_point_on_triangles(p, a, b, c) -> tuple:
    """Closest points on triangles (Ericson's region test), broadcasting.

    Returns the closest points and a feature code per pair: 0 face interior,
    1..3 vertex a/b/c, 4 edge ab, 5 edge bc, 6 edge ca.
    """
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    shape = np.broadcast(d1, va).shape
    out = np.empty(shape + (3,))
    code = np.full(shape, -1, dtype=np.int8)
    done = np.zeros(shape, dtype=bool)

    def assign(mask, pts, k):
        m = mask & ~done
        out[m] = np.broadcast_to(pts, shape + (3,))[m]
        code[m] = k
        done[m] = True

    with np.errstate(divide="ignore", invalid="ignore"):
        assign((d1 <= 0) & (d2 <= 0), a, 1)
        assign((d3 >= 0) & (d4 <= d3), b, 2)
        assign((d6 >= 0) & (d5 <= d6), c, 3)
        v = d1 / (d1 - d3)
        assign((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + v[..., None] * ab, 4)
        w = d2 / (d2 - d6)
        assign((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + w[..., None] * ac, 6)
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        assign((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0), b + w[..., None] * (c - b), 5)
        denom = 1.0 / (va + vb + vc)
        v = vb * denom
        w = vc * denom
        assign(np.ones(shape, dtype=bool), a + v[..., None] * ab + w[..., None] * ac, 0)
    return out, code


def _nearest_triangles(mesh: TriangleMesh, pts: np.ndarray) -> tuple:
    a, b, c = mesh.corners
    nf = len(a)
    dist = np.empty(len(pts))
    idx = np.empty(len(pts), dtype=np.int64)
    closest = np.empty((len(pts), 3))
    feature = np.empty(len(pts), dtype=np.int8)
    step = max(1, _PAIR_CHUNK // nf)
    for s in range(0, len(pts), step):
        p = pts[s:s + step, None, :]
        cp, code = closest_point_on_triangles(p, a[None], b[None], c[None])
        diff = p - cp
        d2 = np.einsum("mfi,mfi->mf", diff, diff)
        j = np.argmin(d2, axis=1)
        rows = np.arange(len(j))
        dist[s:s + step] = np.sqrt(d2[rows, j])
        idx[s:s + step] = j
        closest[s:s + step] = cp[rows, j]
        feature[s:s + step] = code[rows, j]
    return dist, idx, closest, feature


def _ray_crossings(mesh: TriangleMesh, pts: np.ndarray, direction: np.ndarray) -> np.ndarray:
    # Moller-Trumbore, counting hits with t > 0
    a, b, c = mesh.corners
    e1, e2 = b - a, c - a
    h = np.cross(direction, e2)
    det = np.einsum("fi,fi->f", e1, h)
    ok = np.abs(det) > 1e-15
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    q_e1 = None
    counts = np.zeros(len(pts), dtype=np.int64)
    step = max(1, _PAIR_CHUNK // len(a))
    for s in range(0, len(pts), step):
        sv = pts[s:s + step, None, :] - a[None]
        u = np.einsum("mfi,fi->mf", sv, h) * inv
        q_e1 = np.cross(sv, e1[None])
        v = np.einsum("mfi,i->mf", q_e1, direction) * inv
        t = np.einsum("mfi,fi->mf", q_e1, e2) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-12)
        counts[s:s + step] = hit.sum(axis=1)
    return counts


def _pseudonormals(mesh: TriangleMesh, idx, feature) -> np.ndarray:
    """Angle-weighted vertex / summed edge / face normals at the nearest feature."""
    f = mesh.triangles
    nv = len(mesh.vertices)
    vnorm = np.zeros((nv, 3))
    a, b, c = mesh.corners
    for i, (p0, p1, p2) in enumerate(((a, b, c), (b, c, a), (c, a, b))):
        u = p1 - p0
        w = p2 - p0
        cosang = np.einsum("fi,fi->f", u, w) / (np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1))
        ang = np.arccos(np.clip(cosang, -1.0, 1.0))
        np.add.at(vnorm, f[:, i], ang[:, None] * mesh.normals)
    edge_key = {}
    for t, tri in enumerate(f):
        for i, j in ((0, 1), (1, 2), (2, 0)):
            key = (min(tri[i], tri[j]), max(tri[i], tri[j]))
            edge_key.setdefault(key, np.zeros(3))
            edge_key[key] = edge_key[key] + mesh.normals[t]
    out = np.empty((len(idx), 3))
    edge_verts = {4: (0, 1), 5: (1, 2), 6: (2, 0)}
    for m, (t, code) in enumerate(zip(idx, feature)):
        tri = f[t]
        if code == 0:
            out[m] = mesh.normals[t]
        elif code in (1, 2, 3):
            out[m] = vnorm[tri[code - 1]]
        else:
            i, j = edge_verts[int(code)]
            out[m] = edge_key[(min(tri[i], tri[j]), max(tri[i], tri[j]))]
    return out


@dataclass
class MeshQuery:
    distance: np.ndarray
    triangle: np.ndarray
    closest: np.ndarray


def mesh_query(mesh: TriangleMesh, p) -> MeshQuery:
    """Signed distance plus the witnessing nearest triangle and closest point."""
    pts, _ = _points(p)
    dist, idx, closest, feature = _nearest_triangles(mesh, pts)
    if mesh.is_watertight():
        votes = sum((_ray_crossings(mesh, pts, d) % 2 == 1).astype(int) for d in _RAY_DIRS)
        inside = votes >= 2
    else:
        warnings.warn("mesh is not watertight; signing by nearest-feature pseudonormal", RuntimeWarning, stacklevel=3)
        normals = _pseudonormals(mesh, idx, feature)
        inside = np.einsum("mi,mi->m", pts - closest, normals) < 0
    return MeshQuery(np.where(inside, -dist, dist), idx, closest)


def mesh_sdf(mesh: TriangleMesh, p):
    """Exact brute-force distance to the triangles, signed by 3-ray parity vote."""
    pts, single = _points(p)
    return _ret(mesh_query(mesh, pts).distance, single)


def point_triangle_distance(p, a, b, c) -> float:
    cp, _ = closest_point_on_triangles(np.asarray(p, float), np.asarray(a, float), np.asarray(b, float), np.asarray(c, float))
    return float(np.linalg.norm(np.asarray(p, float) - cp))


# ----------------------------------------------------------------------------
# mesh files


def load_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise ValueError(f"{path}:{lineno}: only triangulated faces are supported")
            faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    return TriangleMesh(np.array(verts), np.array(faces))


def save_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_stl(path) -> TriangleMesh:
    """Binary STL; duplicate vertices are merged exactly."""
    data = Path(path).read_bytes()
    if len(data) < 84:
        raise ValueError(f"{path}: too short for binary STL")
    (n,) = struct.unpack_from("<I", data, 80)
    if len(data) < 84 + 50 * n:
        raise ValueError(f"{path}: truncated binary STL ({n} triangles declared)")
    rec = np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    tris = np.frombuffer(data, dtype=rec, count=n, offset=84)["v"].astype(float).reshape(-1, 3)
    verts, inv = np.unique(tris, axis=0, return_inverse=True)
    return TriangleMesh(verts, inv.reshape(-1, 3))


def save_stl(mesh: TriangleMesh, path) -> None:
    n = len(mesh.triangles)
    rec = np.zeros(n, dtype=np.dtype([("normal", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")]))
    rec["normal"] = mesh.normals
    rec["v"] = mesh.vertices[mesh.triangles]
    Path(path).write_bytes(b"\0" * 80 + struct.pack("<I", n) + rec.tobytes())


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return load_obj(path)
    if suffix == ".stl":
        return load_stl(path)
    raise ValueError(f"unsupported mesh format {suffix!r} (expected .obj or .stl)")


def icosphere(radius: float = 1.0, subdivisions: int = 3, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    g = (1.0 + math.sqrt(5.0)) / 2.0
    verts = [(-1, g, 0), (1, g, 0), (-1, -g, 0), (1, -g, 0), (0, -1, g), (0, 1, g),
             (0, -1, -g), (0, 1, -g), (g, 0, -1), (g, 0, 1), (-g, 0, -1), (-g, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.array(verts) * radius + np.asarray(center, float), np.array(faces))


def box_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    verts = lo + corners * (hi - lo)
    # outward-wound quads, index = 4x + 2y + z
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(verts, np.array(faces))


# ----------------------------------------------------------------------------
# shape descriptions


def shape_from_dict(d: dict):
    kind = d.get("type")
    if kind == "sphere":
        return Sphere(d["center"], float(d["radius"]))
    if kind == "capsule":
        return Capsule(d["a"], d["b"], float(d["radius"]))
    if kind == "box":
        return Box(d["center"], d["half_extents"], d.get("rotation", np.eye(3)))
    if kind == "mesh":
        if "path" not in d:
            raise ValueError("mesh geometry needs a 'path'")
        mesh = load_mesh(d["path"])
        if "scale" in d:
            mesh = TriangleMesh(mesh.vertices * float(d["scale"]), mesh.triangles)
        return mesh
    raise ValueError(f"unknown geometry type {kind!r}")


def shape_to_dict(shape) -> dict:
    if isinstance(shape, Sphere):
        return {"type": "sphere", "center": list(shape.center), "radius": shape.radius}
    if isinstance(shape, Capsule):
        return {"type": "capsule", "a": list(shape.endpoint_a), "b": list(shape.endpoint_b), "radius": shape.radius}
    if isinstance(shape, Box):
        return {"type": "box", "center": list(shape.center), "half_extents": list(shape.half_extents),
                "rotation": shape.rotation.tolist()}
    raise TypeError(f"cannot describe {type(shape).__name__} inline")


def primitive_sdf(prim, p):
    return prim.sdf(p)


# ----------------------------------------------------------------------------
# training data


@dataclass
class SampleSet:
    positions: np.ndarray
    distances: np.ndarray

    def __len__(self):
        return len(self.distances)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "z", "d"])
            for (x, y, z), d in zip(self.positions.tolist(), self.distances.tolist()):
                w.writerow([repr(x), repr(y), repr(z), repr(d)])

    @classmethod
    def from_csv(cls, path) -> "SampleSet":
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(arr[:, :3].copy(), arr[:, 3].copy())


def _box_contains_box(outer: AxisBox, inner: AxisBox) -> bool:
    return bool(np.all(inner.lo >= outer.lo) and np.all(inner.hi <= outer.hi))


def sample_training_set(shape, n_surface: int, n_uniform: int, box: AxisBox,
                        sigma_near: float = 0.005, sigma_far: float = 0.05, seed=0) -> SampleSet:
    """DeepSDF-style samples: jittered surface points plus uniform box points.

    Half of the surface points get isotropic noise at ``sigma_near``, half at
    ``sigma_far``.  Jittered points that leave ``box`` are redrawn so that the
    set has exactly ``n_surface + n_uniform`` members, all inside the box.
    """
    if n_surface < 0 or n_uniform < 0:
        raise ValueError("sample counts must be non-negative")
    if not _box_contains_box(box, shape.aabb()):
        raise ValueError("sampling box does not contain the shape")
    rng = np.random.default_rng(seed)
    n_near = n_surface // 2
    sigmas = np.concatenate([np.full(n_near, sigma_near), np.full(n_surface - n_near, sigma_far)])
    pts = np.empty((n_surface, 3))
    todo = np.arange(n_surface)
    for _ in range(1000):
        if todo.size == 0:
            break
        cand = shape.sample_surface(todo.size, rng) + rng.normal(size=(todo.size, 3)) * sigmas[todo, None]
        ok = box.contains(cand)
        pts[todo[ok]] = cand[ok]
        todo = todo[~ok]
    if todo.size:
        raise RuntimeError("could not place jittered surface samples inside the box")
    uni = rng.uniform(box.lo, box.hi, size=(n_uniform, 3))
    allp = np.concatenate([pts, uni])
    d = np.asarray(shape.sdf(allp), dtype=float).reshape(-1)
    return SampleSet(allp, d)


# ----------------------------------------------------------------------------
# metrics


def chamfer_distance(set_a, set_b) -> float:
    """Symmetric Chamfer distance: mean nearest-neighbour distance both ways, halved."""
    a = np.asarray(set_a, dtype=float).reshape(-1, 3)
    b = np.asarray(set_b, dtype=float).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance needs two non-empty point sets")
    return 0.5 * (_mean_nn(a, b) + _mean_nn(b, a))


def _mean_nn(a: np.ndarray, b: np.ndarray) -> float:
    best = np.empty(len(a))
    step = max(1, 4_000_000 // len(b))
    for s in range(0, len(a), step):
        dx = a[s:s + step, None, 0] - b[None, :, 0]
        dy = a[s:s + step, None, 1] - b[None, :, 1]
        dz = a[s:s + step, None, 2] - b[None, :, 2]
        best[s:s + step] = np.sqrt((dx * dx + dy * dy + dz * dz).min(axis=1))
    return math.fsum(best.tolist()) / len(a)


def _mae_rmse(err: np.ndarray):
    if err.size == 0:
        return None, None
    return float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err * err)))


def accuracy_report(predicted, truth, near_threshold: float = NEAR_THRESHOLD) -> dict:
    """MAE / RMSE on points near the surface (|truth| < threshold), far, and pooled.

    ``mae_all``/``rmse_all`` pool every point; ``mae_mean``/``rmse_mean`` are
    the plain average of the near and far figures.  A partition without points
    is reported as ``None``.
    """
    pred = np.asarray(predicted, dtype=float).reshape(-1)
    true = np.asarray(truth, dtype=float).reshape(-1)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {true.size} truths")
    err = pred - true
    near = np.abs(true) < near_threshold
    out = {"near_threshold": float(near_threshold), "n_near": int(near.sum()), "n_far": int((~near).sum())}
    out["mae_near"], out["rmse_near"] = _mae_rmse(err[near])
    out["mae_far"], out["rmse_far"] = _mae_rmse(err[~near])
    out["mae_all"], out["rmse_all"] = _mae_rmse(err)
    parts = [(out["mae_near"], out["rmse_near"]), (out["mae_far"], out["rmse_far"])]
    parts = [p for p in parts if p[0] is not None]
    out["mae_mean"] = float(np.mean([p[0] for p in parts])) if parts else None
    out["rmse_mean"] = float(np.mean([p[1] for p in parts])) if parts else None
    return out
