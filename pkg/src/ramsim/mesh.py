"""Triangle meshes for segmented anatomy: loading, closest point, ray casting.

Mesh files follow the medical-imaging convention of millimeter units; loaders
convert to meters by default (``units="mm"``).  Loaded meshes are checked for
outward orientation via signed volume and flipped when negative, and
degenerate (zero-area) triangles are dropped.

Queries are accelerated with an axis-aligned bounding-box tree.  Brute-force
equivalents (`closest_point_brute`, `ray_hits_brute`) are kept as oracles.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_AREA_EPS = 1e-16          # m^2; triangles below this are dropped at load
_RAY_EPS = 1e-12           # minimum ray parameter counted as "forward"
_LEAF_SIZE = 8


@dataclass(frozen=True, eq=False)
class Hit:
    """One ray-triangle intersection."""

    t: float                 # ray parameter (meters along a unit direction)
    point: np.ndarray
    triangle: int


class TriangleMesh:
    """Immutable indexed triangle mesh with vertices in meters."""

    def __init__(self, vertices, triangles):
        v = np.asarray(vertices, dtype=float).reshape(-1, 3)
        f = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh vertices must be finite")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        self.vertices = v
        self.triangles = f
        self._corners = v[f]                       # (n, 3, 3)
        self._corners.setflags(write=False)
        self._bvh: _AabbTree | None = None

    def __len__(self):
        return len(self.triangles)

    def triangle_corners(self, index: int) -> np.ndarray:
        return self._corners[index]

    def triangle_normal(self, index: int) -> np.ndarray:
        a, b, c = self._corners[index]
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n)
        if norm == 0.0:
            raise ValueError(f"triangle {index} is degenerate")
        return n / norm

    def areas(self) -> np.ndarray:
        a = self._corners[:, 0]
        cross = np.cross(self._corners[:, 1] - a, self._corners[:, 2] - a)
        return 0.5 * np.linalg.norm(cross, axis=1)

    def signed_volume(self) -> float:
        a, b, c = self._corners[:, 0], self._corners[:, 1], self._corners[:, 2]
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def flipped(self) -> "TriangleMesh":
        return TriangleMesh(self.vertices, self.triangles[:, ::-1])

    def transformed(self, transform) -> "TriangleMesh":
        return TriangleMesh(transform.apply(self.vertices), self.triangles)

    def bvh(self) -> "_AabbTree":
        if self._bvh is None:
            self._bvh = _AabbTree(self._corners)
        return self._bvh


def sanitize(vertices, triangles, units: str = "m",
             ensure_outward: bool = False) -> TriangleMesh:
    """Build a mesh applying unit scaling, degeneracy filtering, orientation."""
    scale = {"m": 1.0, "mm": 1e-3}[units]
    mesh = TriangleMesh(np.asarray(vertices, dtype=float) * scale, triangles)
    areas = mesh.areas()
    keep = areas > _AREA_EPS
    if not np.all(keep):
        mesh = TriangleMesh(mesh.vertices, mesh.triangles[keep])
    if ensure_outward and len(mesh) and mesh.signed_volume() < 0.0:
        mesh = mesh.flipped()
    return mesh


# -- file formats ---------------------------------------------------------------

def load_mesh(path: str, units: str = "mm", ensure_outward: bool = True) -> TriangleMesh:
    """Load an STL (binary or ASCII) or OBJ file by extension."""
    lower = str(path).lower()
    if lower.endswith(".stl"):
        v, f = _read_stl(path)
    elif lower.endswith(".obj"):
        v, f = _read_obj(path)
    else:
        raise ValueError(f"unsupported mesh format: {path}")
    return sanitize(v, f, units=units, ensure_outward=ensure_outward)


def _read_stl(path):
    with open(path, "rb") as fh:
        head = fh.read(5)
        fh.seek(0)
        data = fh.read()
    if head == b"solid" and b"facet" in data[:2048]:
        return _parse_ascii_stl(data.decode("ascii", errors="replace"))
    return _parse_binary_stl(data)


def _parse_binary_stl(data: bytes):
    if len(data) < 84:
        raise ValueError("binary STL too short")
    (count,) = struct.unpack_from("<I", data, 80)
    expected = 84 + 50 * count
    if len(data) < expected:
        raise ValueError("binary STL truncated")
    raw = np.frombuffer(data, dtype=np.uint8, count=50 * count, offset=84)
    raw = raw.reshape(count, 50)
    floats = raw[:, :48].copy().view("<f4").reshape(count, 12).astype(float)
    verts = floats[:, 3:12].reshape(count * 3, 3)   # skip the normal
    tris = np.arange(count * 3, dtype=np.int64).reshape(count, 3)
    return _weld(verts, tris)


def _parse_ascii_stl(text: str):
    verts = []
    for line in text.splitlines():
        parts = line.split()
        if parts[:1] == ["vertex"]:
            verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
    if len(verts) % 3 != 0:
        raise ValueError("ASCII STL vertex count is not a multiple of 3")
    v = np.asarray(verts, dtype=float)
    tris = np.arange(len(v), dtype=np.int64).reshape(-1, 3)
    return _weld(v, tris)


def _weld(vertices, triangles):
    # STL repeats vertices per facet; merge exact duplicates
    uniq, inverse = np.unique(vertices, axis=0, return_inverse=True)
    return uniq, inverse[triangles]


def _read_obj(path):
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for k in range(1, len(idx) - 1):   # fan-triangulate polygons
                    faces.append([idx[0], idx[k], idx[k + 1]])
    return np.asarray(verts, dtype=float), np.asarray(faces, dtype=np.int64)


def save_obj(path: str, mesh: TriangleMesh, units: str = "mm") -> None:
    scale = {"m": 1.0, "mm": 1e3}[units]
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices * scale:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# -- closest point ----------------------------------------------------------------

def closest_point_on_triangle(corners: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Nearest point to p on a single triangle (Ericson's region test)."""
    a, b, c = corners
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = float(np.dot(ab, ap))
    d2 = float(np.dot(ac, ap))
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3 = float(np.dot(ab, bp))
    d4 = float(np.dot(ac, bp))
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return a + v * ab
    cp = p - c
    d5 = float(np.dot(ab, cp))
    d6 = float(np.dot(ac, cp))
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return a + w * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


def closest_point_brute(p, mesh: TriangleMesh) -> tuple[np.ndarray, int]:
    """Exhaustive closest-point query; oracle for the tree-accelerated path."""
    p = np.asarray(p, dtype=float)
    best_d2 = np.inf
    best_point = None
    best_idx = -1
    for i in range(len(mesh)):
        cand = closest_point_on_triangle(mesh.triangle_corners(i), p)
        d2 = float(np.dot(cand - p, cand - p))
        if d2 < best_d2:
            best_d2, best_point, best_idx = d2, cand, i
    if best_idx < 0:
        raise ValueError("mesh has no triangles")
    return best_point, best_idx


def closest_point_on_mesh(p, mesh: TriangleMesh) -> tuple[np.ndarray, int]:
    """Globally nearest point on the mesh surface and its triangle index."""
    p = np.asarray(p, dtype=float)
    return mesh.bvh().closest_point(p)


def closest_points_batch(points, mesh: TriangleMesh,
                         chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """Closest mesh points for many queries at once (vectorized brute force).

    Evaluates every point-triangle pair, so complexity is P*T; intended for
    the desk-scale meshes this package targets.  Returns the (P, 3) surface
    points and (P,) triangle indices, with ties resolved to the lowest index
    exactly like the scalar queries.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    out_p = np.empty_like(points)
    out_i = np.empty(len(points), dtype=np.int64)
    for lo in range(0, len(points), chunk):
        sub = points[lo:lo + chunk]
        cand = _closest_on_triangles(mesh._corners, sub)       # (P, T, 3)
        d2 = np.sum((cand - sub[:, None, :]) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)                            # first min = lowest index
        out_p[lo:lo + chunk] = cand[np.arange(len(sub)), idx]
        out_i[lo:lo + chunk] = idx
    return out_p, out_i


def _closest_on_triangles(corners: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Ericson's region test vectorized over (P points) x (T triangles).

    The six dot products reduce to two point-vs-edge matmuls plus
    per-triangle constants; region candidates are then only materialized
    for the pairs that land in each region.
    """
    a = corners[:, 0]
    b = corners[:, 1]
    c = corners[:, 2]
    ab = b - a
    ac = c - a
    g1 = points @ ab.T        # (P, T)
    g2 = points @ ac.T
    d1 = g1 - np.sum(a * ab, axis=1)
    d2 = g2 - np.sum(a * ac, axis=1)
    d3 = g1 - np.sum(b * ab, axis=1)
    d4 = g2 - np.sum(b * ac, axis=1)
    d5 = g1 - np.sum(c * ab, axis=1)
    d6 = g2 - np.sum(c * ac, axis=1)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty(d1.shape + (3,))
    assigned = np.zeros(d1.shape, dtype=bool)

    def fill(cond, func):
        sel = cond & ~assigned
        if sel.any():
            r, t = np.nonzero(sel)
            out[r, t] = func(r, t)
            assigned[sel] = True

    def bary(num, den):
        return np.where(den == 0.0, 0.0, num / np.where(den == 0.0, 1.0, den))[:, None]

    # region conditions in Ericson's order; first match wins
    fill((d1 <= 0.0) & (d2 <= 0.0), lambda r, t: a[t])
    fill((d3 >= 0.0) & (d4 <= d3), lambda r, t: b[t])
    fill((vc <= 0.0) & (d1 >= 0.0) & (d3 <= 0.0),
         lambda r, t: a[t] + bary(d1[r, t], d1[r, t] - d3[r, t]) * ab[t])
    fill((d6 >= 0.0) & (d5 <= d6), lambda r, t: c[t])
    fill((vb <= 0.0) & (d2 >= 0.0) & (d6 <= 0.0),
         lambda r, t: a[t] + bary(d2[r, t], d2[r, t] - d6[r, t]) * ac[t])
    fill((va <= 0.0) & (d4 - d3 >= 0.0) & (d5 - d6 >= 0.0),
         lambda r, t: b[t] + bary(d4[r, t] - d3[r, t],
                                  (d4[r, t] - d3[r, t]) + (d5[r, t] - d6[r, t])) * (c - b)[t])
    if not assigned.all():
        r, t = np.nonzero(~assigned)
        den = (va + vb + vc)[r, t]
        out[r, t] = a[t] + bary(vb[r, t], den) * ab[t] + bary(vc[r, t], den) * ac[t]
    return out


# -- ray casting ------------------------------------------------------------------

def ray_triangle(origin, direction, corners) -> float | None:
    """Moller-Trumbore; returns the ray parameter t > 0 or None."""
    a, b, c = corners
    e1 = b - a
    e2 = c - a
    h = np.cross(direction, e2)
    det = float(np.dot(e1, h))
    if abs(det) < 1e-14:
        return None
    inv = 1.0 / det
    s = origin - a
    u = float(np.dot(s, h)) * inv
    if u < 0.0 or u > 1.0:
        return None
    qv = np.cross(s, e1)
    v = float(np.dot(direction, qv)) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = float(np.dot(e2, qv)) * inv
    if t <= _RAY_EPS:
        return None
    return t


def ray_hits_brute(origin, direction, mesh: TriangleMesh) -> Hit | None:
    """Exhaustive nearest forward intersection; oracle for the tree walk."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    best = None
    for i in range(len(mesh)):
        t = ray_triangle(origin, direction, mesh.triangle_corners(i))
        if t is not None and (best is None or t < best.t):
            best = Hit(t, origin + t * direction, i)
    return best


def ray_mesh_intersect(origin, direction, mesh: TriangleMesh) -> Hit | None:
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    return mesh.bvh().raycast(origin, direction)


# -- AABB tree --------------------------------------------------------------------

class _AabbTree:
    """Static median-split AABB tree over triangles.

    Tie-breaking matches the brute-force oracles exactly: among equal
    distances (or equal ray parameters) the lowest triangle index wins.
    """

    def __init__(self, corners: np.ndarray):
        self._corners = corners
        n = len(corners)
        lo = corners.min(axis=1)
        hi = corners.max(axis=1)
        centers = 0.5 * (lo + hi)
        self._nodes: list[tuple] = []    # (lo, hi, left, right, indices)
        order = np.arange(n, dtype=np.int64)
        if n:
            self._build(order, lo, hi, centers)

    def _build(self, idx, lo, hi, centers) -> int:
        node_lo = lo[idx].min(axis=0)
        node_hi = hi[idx].max(axis=0)
        me = len(self._nodes)
        self._nodes.append(None)
        if len(idx) <= _LEAF_SIZE:
            self._nodes[me] = (node_lo, node_hi, -1, -1, np.sort(idx))
            return me
        axis = int(np.argmax(node_hi - node_lo))
        mid = len(idx) // 2
        part = idx[np.argsort(centers[idx, axis], kind="stable")]
        left = self._build(part[:mid], lo, hi, centers)
        right = self._build(part[mid:], lo, hi, centers)
        self._nodes[me] = (node_lo, node_hi, left, right, None)
        return me

    @staticmethod
    def _box_dist2(lo, hi, p):
        d = np.maximum(np.maximum(lo - p, 0.0), p - hi)
        return float(np.dot(d, d))

    def closest_point(self, p: np.ndarray) -> tuple[np.ndarray, int]:
        if not self._nodes:
            raise ValueError("mesh has no triangles")
        best_d2 = np.inf
        best_point = None
        best_idx = -1
        stack = [0]
        while stack:
            node = self._nodes[stack.pop()]
            lo, hi, left, right, indices = node
            if self._box_dist2(lo, hi, p) > best_d2:
                continue
            if indices is not None:
                for i in indices:
                    cand = closest_point_on_triangle(self._corners[i], p)
                    d2 = float(np.dot(cand - p, cand - p))
                    if d2 < best_d2 or (d2 == best_d2 and i < best_idx):
                        best_d2, best_point, best_idx = d2, cand, int(i)
            else:
                # visit the nearer child first
                dl = self._box_dist2(*self._nodes[left][:2], p)
                dr = self._box_dist2(*self._nodes[right][:2], p)
                if dl <= dr:
                    stack.extend([right, left])
                else:
                    stack.extend([left, right])
        return best_point, best_idx

    @staticmethod
    def _ray_box(lo, hi, origin, direction):
        tmin, tmax = 0.0, np.inf
        for k in range(3):
            d = direction[k]
            if d == 0.0:
                if origin[k] < lo[k] or origin[k] > hi[k]:
                    return None
                continue
            a = (lo[k] - origin[k]) / d
            b = (hi[k] - origin[k]) / d
            if a > b:
                a, b = b, a
            tmin = max(tmin, a)
            tmax = min(tmax, b)
            if tmax < tmin:
                return None
        return tmin

    def raycast(self, origin: np.ndarray, direction: np.ndarray) -> Hit | None:
        if not self._nodes:
            return None
        best_t = np.inf
        best_idx = -1
        stack = [0]
        while stack:
            lo, hi, left, right, indices = self._nodes[stack.pop()]
            enter = self._ray_box(lo, hi, origin, direction)
            if enter is None or enter > best_t:
                continue
            if indices is not None:
                for i in indices:
                    t = ray_triangle(origin, direction, self._corners[i])
                    if t is not None and (t < best_t or (t == best_t and i < best_idx)):
                        best_t, best_idx = t, int(i)
            else:
                stack.extend([right, left])
        if best_idx < 0:
            return None
        return Hit(best_t, origin + best_t * direction, best_idx)


# -- generated phantoms -------------------------------------------------------------

def make_icosphere(radius: float = 0.09, subdivisions: int = 3,
                   center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Sphere-like head phantom: subdivided icosahedron, outward oriented."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    cache: dict[tuple[int, int], int] = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            m = verts[i] + verts[j]
            verts.append(m / np.linalg.norm(m))
            cache[key] = len(verts) - 1
        return cache[key]

    for _ in range(subdivisions):
        nxt = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    v = np.asarray(verts) * radius + np.asarray(center, dtype=float)
    return sanitize(v, np.asarray(faces, dtype=np.int64), ensure_outward=True)


def make_capped_cylinder(radius: float = 0.04, length: float = 0.35,
                         segments: int = 48, center=(0.0, 0.0, 0.0),
                         axis=(1.0, 0.0, 0.0)) -> TriangleMesh:
    """Cylinder-like femur phantom with fan-capped ends along ``axis``."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    angles = np.linspace(0.0, 2.0 * np.pi, segments, endpoint=False)
    ring = np.outer(np.cos(angles), u) + np.outer(np.sin(angles), w)
    half = 0.5 * length * axis
    bottom = ring * radius - half
    top = ring * radius + half
    verts = np.vstack([bottom, top, -half[None, :], half[None, :]])
    ib, it = 2 * segments, 2 * segments + 1
    faces = []
    for k in range(segments):
        k2 = (k + 1) % segments
        faces += [(k, k2, segments + k), (k2, segments + k2, segments + k)]
        faces += [(ib, k2, k), (it, segments + k, segments + k2)]
    v = verts + np.asarray(center, dtype=float)
    return sanitize(v, np.asarray(faces, dtype=np.int64), ensure_outward=True)


def make_lumpy_phantom(radius: float = 0.09, subdivisions: int = 2,
                       center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Asymmetric head-sized phantom for registration scenarios.

    Smooth radial lobes break every rotational symmetry, so surface
    registration observes all six degrees of freedom (a plain sphere leaves
    rotation unconstrained).
    """
    ball = make_icosphere(radius=1.0, subdivisions=subdivisions)
    d = ball.vertices
    lump = (1.0
            + 0.25 * np.sin(3.0 * d[:, 0] + 1.0) * np.cos(2.0 * d[:, 1])
            + 0.20 * np.sin(2.0 * d[:, 2] - 0.5))
    v = ball.vertices * (radius * lump)[:, None] + np.asarray(center, dtype=float)
    return sanitize(v, ball.triangles, ensure_outward=True)


_BUILTIN_PHANTOMS = {
    "builtin:head": lambda: make_icosphere(radius=0.09, subdivisions=3),
    "builtin:femur": lambda: make_capped_cylinder(radius=0.04, length=0.35),
    "builtin:lumpy": lambda: make_lumpy_phantom(radius=0.09, subdivisions=2),
}


def resolve_mesh_source(source: str, units: str = "mm") -> TriangleMesh:
    """Load ``builtin:*`` phantoms or a mesh file path."""
    if source in _BUILTIN_PHANTOMS:
        return _BUILTIN_PHANTOMS[source]()
    return load_mesh(source, units=units)
