"""Rigid-transform algebra, coordinate-frame graph, and pose error metrics.

All quantities are SI: meters for translations, radians for angles.
Rotations are unit quaternions in (w, x, y, z) order, canonicalized to a
non-negative scalar part so that equal rotations compare equal.  A transform
``a_T_b`` maps points expressed in frame ``b`` into frame ``a``:
``p_a = R(q) p_b + t``.

Poses serialize as JSON objects ``{"q": [w, x, y, z], "t": [x, y, z]}`` in SI
units; every other module uses this format on the wire and on disk.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AmbiguousPathError, DisconnectedFramesError

# Canonical frame names of the tracked kinematic chain.  FrameGraph accepts
# any string id; these constants cover the standard setup: virtual world,
# optical tracker, HMD plus its physical/virtual marker pair, the movable
# reference marker pair, robot base/flange, instrument, patient, medical
# image, and the hand-held clicker.
WORLD = "W"
TRACKER = "N"
HMD = "H"
HMD_MARKER = "O_holo"
REF_MARKER = "O_ref"
VIRTUAL_REF_MARKER = "VO_ref"
VIRTUAL_HMD_MARKER = "VO_holo"
ROBOT_BASE = "R"
ROBOT_FLANGE = "E"
INSTRUMENT = "I"
PATIENT = "P"
IMAGE = "M"
CLICKER = "C"

CANONICAL_FRAMES = (
    WORLD, TRACKER, HMD, HMD_MARKER, REF_MARKER, VIRTUAL_REF_MARKER,
    VIRTUAL_HMD_MARKER, ROBOT_BASE, ROBOT_FLANGE, INSTRUMENT, PATIENT,
    IMAGE, CLICKER,
)

_QUAT_NORM_TOL = 1e-9


# -- quaternion helpers (broadcast over leading axes) --------------------------

def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product of (..., 4) quaternion arrays."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate (..., 3) vectors by (..., 4) unit quaternions."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be non-zero")
    half = 0.5 * angle
    return np.concatenate([[math.cos(half)], math.sin(half) * axis / n])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; branches on the largest diagonal term for stability."""
    m = np.asarray(m, dtype=float)
    t = m[0, 0] + m[1, 1] + m[2, 2]
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([
            (m[2, 1] - m[1, 2]) / s,
            0.25 * s,
            (m[0, 1] + m[1, 0]) / s,
            (m[0, 2] + m[2, 0]) / s,
        ])
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([
            (m[0, 2] - m[2, 0]) / s,
            (m[0, 1] + m[1, 0]) / s,
            0.25 * s,
            (m[1, 2] + m[2, 1]) / s,
        ])
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([
            (m[1, 0] - m[0, 1]) / s,
            (m[0, 2] + m[2, 0]) / s,
            (m[1, 2] + m[2, 1]) / s,
            0.25 * s,
        ])
    return q / np.linalg.norm(q)


def quat_angle(q: np.ndarray) -> float:
    """Rotation angle of a unit quaternion, in [0, pi]."""
    q = np.asarray(q, dtype=float)
    return 2.0 * math.atan2(float(np.linalg.norm(q[1:])), abs(float(q[0])))


def _canonicalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not math.isfinite(n) or n < 1e-12:
        raise ValueError("quaternion must be finite with non-zero norm")
    q = q / n
    # q and -q encode the same rotation; keep the scalar part non-negative
    if q[0] < 0.0 or (q[0] == 0.0 and (q[1] < 0.0 or (q[1] == 0.0 and (q[2] < 0.0 or (q[2] == 0.0 and q[3] < 0.0))))):
        q = -q
    return q


# -- rigid transform -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """SE(3) pose: unit quaternion (w, x, y, z) plus translation in meters."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = _canonicalize(self.q)
        t = np.asarray(self.t, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    # constructors

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "RigidTransform":
        return RigidTransform(t=np.array([x, y, z], dtype=float))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        return RigidTransform(quat_from_axis_angle(axis, angle), np.asarray(translation, dtype=float))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return RigidTransform(quat_from_matrix(m[:3, :3]), m[:3, 3])

    # algebra

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.q)
        m[:3, 3] = self.t
        return m

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map one (3,) point or an (N, 3) batch through this transform."""
        return quat_rotate(self.q, np.asarray(points, dtype=float)) + self.t

    def inverse(self) -> "RigidTransform":
        qc = quat_conj(self.q)
        return RigidTransform(qc, -quat_rotate(qc, self.t))

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(quat_mul(self.q, other.q), quat_rotate(self.q, other.t) + self.t)

    def allclose(self, other: "RigidTransform", tol_t: float = 1e-9, tol_r: float = 1e-9) -> bool:
        return (float(np.linalg.norm(self.t - other.t)) <= tol_t
                and quat_angle(quat_mul(quat_conj(self.q), other.q)) <= tol_r)

    # serialization

    def to_json(self) -> dict:
        return {"q": [float(v) for v in self.q], "t": [float(v) for v in self.t]}

    @staticmethod
    def from_json(obj: dict) -> "RigidTransform":
        return RigidTransform(np.asarray(obj["q"], dtype=float), np.asarray(obj["t"], dtype=float))

    def __repr__(self):
        q = ", ".join(f"{v:.6g}" for v in self.q)
        t = ", ".join(f"{v:.6g}" for v in self.t)
        return f"RigidTransform(q=[{q}], t=[{t}])"


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """a then-applied-after b: (compose(a, b))(p) == a(b(p))."""
    return a @ b


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def trans(x: float, y: float, z: float) -> RigidTransform:
    return RigidTransform.from_translation(x, y, z)


def rot_x(angle: float) -> RigidTransform:
    return RigidTransform.from_axis_angle((1.0, 0.0, 0.0), angle)


def rot_y(angle: float) -> RigidTransform:
    return RigidTransform.from_axis_angle((0.0, 1.0, 0.0), angle)


def rot_z(angle: float) -> RigidTransform:
    return RigidTransform.from_axis_angle((0.0, 0.0, 1.0), angle)


# -- pose errors ---------------------------------------------------------------

@dataclass(frozen=True)
class PoseError:
    """Euclidean translation error (m) and angle-axis rotation error (rad)."""

    translation_error: float
    rotation_error: float


@dataclass(frozen=True)
class PerAxisError:
    """Signed per-axis errors: actual minus planned.

    ``rotation`` holds fixed-axis XYZ angles of the relative rotation
    expressed in the planned pose's frame; ``gimbal_degenerate`` is set when
    the pitch is within 1e-6 rad of +/- pi/2, where roll and yaw couple and
    yaw is conventionally reported as zero.
    """

    translation: np.ndarray
    rotation: np.ndarray
    gimbal_degenerate: bool


def pose_error(planned: RigidTransform, actual: RigidTransform) -> PoseError:
    dq = quat_mul(quat_conj(planned.q), actual.q)
    return PoseError(
        translation_error=float(np.linalg.norm(planned.t - actual.t)),
        rotation_error=quat_angle(dq),
    )


_GIMBAL_TOL = 1e-6


def fixed_xyz_angles(rotation: np.ndarray) -> tuple[np.ndarray, bool]:
    """Decompose a rotation matrix as Rz(yaw) @ Ry(pitch) @ Rx(roll).

    Fixed-axis (extrinsic) XYZ convention: roll about world x first, then
    pitch about world y, then yaw about world z.  Returns the [roll, pitch,
    yaw] vector and a gimbal-degeneracy flag.
    """
    m = np.asarray(rotation, dtype=float)
    sp = min(1.0, max(-1.0, -m[2, 0]))
    pitch = math.asin(sp)
    degenerate = abs(abs(pitch) - 0.5 * math.pi) < _GIMBAL_TOL
    if degenerate:
        # cos(pitch) ~ 0: only roll -/+ yaw is observable; report yaw = 0
        yaw = 0.0
        if sp > 0.0:
            roll = math.atan2(m[0, 1], m[1, 1])
        else:
            roll = math.atan2(-m[0, 1], m[1, 1])
    else:
        roll = math.atan2(m[2, 1], m[2, 2])
        yaw = math.atan2(m[1, 0], m[0, 0])
    return np.array([roll, pitch, yaw]), degenerate


def per_axis_error(planned: RigidTransform, actual: RigidTransform) -> PerAxisError:
    rel_q = quat_mul(quat_conj(planned.q), actual.q)
    angles, degenerate = fixed_xyz_angles(quat_to_matrix(_canonicalize(rel_q)))
    return PerAxisError(
        translation=np.asarray(actual.t - planned.t),
        rotation=angles,
        gimbal_degenerate=degenerate,
    )


# -- frame graph ---------------------------------------------------------------

_RESOLVE_TOL_T = 1e-6
_RESOLVE_TOL_R = 1e-6
_MAX_ENUMERATED_PATHS = 4096


@dataclass(frozen=True)
class FrameEdge:
    parent: str
    child: str
    transform: RigidTransform
    timestamp: float = 0.0


class FrameGraph:
    """Directed graph of named frames with rigid-transform edges.

    Edge (parent, child, T) stores ``parent_T_child``.  ``resolve`` walks the
    shortest undirected path, inverting edges traversed against their stored
    direction.  Timestamps are carried for future streaming use but ignored
    by resolution (the chain is quasi-static during planning).

    Mutation is expected to finish before queries begin (single-writer
    phase); queries themselves are read-only and thread-safe.
    """

    def __init__(self):
        self._edges: dict[tuple[str, str], FrameEdge] = {}

    def add_edge(self, parent: str, child: str, transform: RigidTransform,
                 timestamp: float = 0.0) -> None:
        if parent == child:
            raise ValueError("self-edges are not allowed")
        # at most one edge per ordered pair; re-adding updates in place
        self._edges[(parent, child)] = FrameEdge(parent, child, transform, timestamp)

    def edges(self) -> list[FrameEdge]:
        return list(self._edges.values())

    def frames(self) -> set[str]:
        out: set[str] = set()
        for p, c in self._edges:
            out.add(p)
            out.add(c)
        return out

    def _adjacency(self) -> dict[str, list[tuple[str, RigidTransform]]]:
        adj: dict[str, list[tuple[str, RigidTransform]]] = {}
        for (p, c), e in self._edges.items():
            adj.setdefault(p, []).append((c, e.transform))
            adj.setdefault(c, []).append((p, e.transform.inverse()))
        for lst in adj.values():
            lst.sort(key=lambda item: item[0])
        return adj

    def resolve(self, from_frame: str, to_frame: str) -> RigidTransform:
        """Transform mapping ``to_frame`` coordinates into ``from_frame``.

        Raises DisconnectedFramesError when no path exists and
        AmbiguousPathError when alternative paths disagree by more than
        1e-6 m / 1e-6 rad.
        """
        if from_frame == to_frame:
            return RigidTransform.identity()
        adj = self._adjacency()
        if from_frame not in adj or to_frame not in adj:
            raise DisconnectedFramesError(f"no path from '{from_frame}' to '{to_frame}'")

        # Dijkstra on hop count with lexicographic tie-breaking on the node
        # name sequence, for a deterministic choice among equal-length paths.
        best: dict[str, tuple[int, tuple[str, ...]]] = {}
        heap: list[tuple[int, tuple[str, ...], str]] = [(0, (from_frame,), from_frame)]
        settled_path: tuple[str, ...] | None = None
        while heap:
            dist, names, node = heapq.heappop(heap)
            if node in best and best[node] <= (dist, names):
                continue
            best[node] = (dist, names)
            if node == to_frame:
                settled_path = names
                break
            for nbr, _ in adj[node]:
                if nbr in names:
                    continue
                cand = (dist + 1, names + (nbr,))
                if nbr not in best or cand < best[nbr]:
                    heapq.heappush(heap, (cand[0], cand[1], nbr))
        if settled_path is None:
            raise DisconnectedFramesError(f"no path from '{from_frame}' to '{to_frame}'")

        result = self._compose_along(settled_path, adj)
        self._check_ambiguity(from_frame, to_frame, adj, result, settled_path)
        return result

    @staticmethod
    def _compose_along(path: tuple[str, ...],
                       adj: dict[str, list[tuple[str, RigidTransform]]]) -> RigidTransform:
        out = RigidTransform.identity()
        for u, v in zip(path[:-1], path[1:]):
            t = next(t for nbr, t in adj[u] if nbr == v)
            out = out @ t
        return out

    def _check_ambiguity(self, src: str, dst: str,
                         adj: dict[str, list[tuple[str, RigidTransform]]],
                         reference: RigidTransform,
                         reference_path: tuple[str, ...]) -> None:
        # Fast path: the connected component is a tree, so the path is unique.
        component = {src}
        stack = [src]
        while stack:
            for nbr, _ in adj[stack.pop()]:
                if nbr not in component:
                    component.add(nbr)
                    stack.append(nbr)
        n_edges = sum(1 for (p, c) in self._edges if p in component)
        if n_edges == len(component) - 1:
            return

        # Cycles exist: enumerate simple paths between the endpoints and
        # verify each composes to the same transform within tolerance.
        count = 0

        def walk(node: str, visited: set[str], acc: RigidTransform):
            nonlocal count
            if count >= _MAX_ENUMERATED_PATHS:
                return
            if node == dst:
                count += 1
                if not acc.allclose(reference, _RESOLVE_TOL_T, _RESOLVE_TOL_R):
                    raise AmbiguousPathError(
                        f"paths from '{src}' to '{dst}' disagree beyond tolerance")
                return
            for nbr, t in adj[node]:
                if nbr in visited:
                    continue
                walk(nbr, visited | {nbr}, acc @ t)

        walk(src, {src}, RigidTransform.identity())
