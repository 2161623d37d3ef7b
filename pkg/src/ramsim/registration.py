"""Subject-image registration: paired-point rigid fit and ICP refinement.

The paired-point solver is the SVD least-squares fit with determinant
correction, so reflections are never returned even for mirror-symmetric or
coplanar inputs.  ICP alternates closest-point correspondence against a
triangle mesh with the paired-point fit; its per-iteration RMS sequence is
non-increasing by construction.

Point lists load from JSON arrays (``[[x, y, z], ...]``) or CSV with one
``x,y,z`` row per point.  File coordinates follow the mesh loaders' unit
convention (millimeters by default).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError, TooFewPointsError
from .geometry import RigidTransform
from .mesh import TriangleMesh, closest_points_batch

_COLLINEAR_RATIO = 1e-12


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(p) < 1:
            raise ValueError("point cloud needs at least one point")
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self):
        return len(self.points)

    def transformed(self, transform: RigidTransform) -> "PointCloud":
        return PointCloud(transform.apply(self.points))


@dataclass(frozen=True)
class RegistrationResult:
    transform: RigidTransform
    fre_rms: float            # residual RMS, meters
    iterations: int
    converged: bool


def _fit_rigid(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    sc = source.mean(axis=0)
    tc = target.mean(axis=0)
    s0 = source - sc
    t0 = target - tc

    sv = np.linalg.svd(s0, compute_uv=False)
    if sv[0] <= 0.0 or (sv[1] < _COLLINEAR_RATIO * sv[0] and sv[2] < _COLLINEAR_RATIO * sv[0]):
        raise DegenerateGeometryError("source points are collinear")

    h = s0.T @ t0
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = tc - r @ sc
    return RigidTransform.from_matrix(np.block([[r, t[:, None]], [np.zeros((1, 3)), 1.0]]))


def paired_point_register(source: PointCloud, target: PointCloud) -> RegistrationResult:
    """Least-squares rigid transform mapping source onto target.

    Requires equal sizes >= 3 and non-collinear sources; the fiducial
    registration error (FRE) is reported as residual RMS in meters.
    """
    if len(source) != len(target):
        raise ValueError("source and target must have equal sizes")
    if len(source) < 3:
        raise TooFewPointsError("paired-point registration needs >= 3 points")
    transform = _fit_rigid(source.points, target.points)
    residual = transform.apply(source.points) - target.points
    fre = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
    return RegistrationResult(transform, fre, iterations=0, converged=True)


def icp(source: PointCloud, target_mesh: TriangleMesh, initial: RigidTransform,
        max_iters: int = 100, tol: float = 1e-6) -> RegistrationResult:
    """Refine ``initial`` by iterative closest point against a mesh surface.

    Stops when the RMS improvement drops below ``tol`` (converged) or after
    ``max_iters`` iterations (not converged).
    """
    if len(target_mesh) == 0:
        raise ValueError("target mesh is empty")
    current = initial
    prev_rms = _surface_rms(source, target_mesh, current)
    if max_iters <= 0:
        return RegistrationResult(current, prev_rms, iterations=0, converged=False)

    iterations = 0
    converged = False
    rms = prev_rms
    for _ in range(max_iters):
        moved = current.apply(source.points)
        matches, _ = closest_points_batch(moved, target_mesh)
        step = paired_point_register(source, PointCloud(matches))
        current = step.transform
        rms = step.fre_rms
        iterations += 1
        if abs(prev_rms - rms) < tol:
            converged = True
            break
        prev_rms = rms
    return RegistrationResult(current, rms, iterations, converged)


def _surface_rms(source: PointCloud, mesh: TriangleMesh, transform: RigidTransform) -> float:
    moved = transform.apply(source.points)
    matches, _ = closest_points_batch(moved, mesh)
    return float(np.sqrt(np.mean(np.sum((matches - moved) ** 2, axis=1))))


# -- point-list files ------------------------------------------------------------

def load_points(path: str, units: str = "mm") -> PointCloud:
    scale = {"m": 1.0, "mm": 1e-3}[units]
    text = open(path, "r", encoding="utf-8").read()
    if str(path).lower().endswith(".json"):
        rows = json.loads(text)
    else:
        rows = []
        for row in csv.reader(text.splitlines()):
            try:
                rows.append([float(row[0]), float(row[1]), float(row[2])])
            except (ValueError, IndexError):
                continue   # header or blank row
    return PointCloud(np.asarray(rows, dtype=float) * scale)


def save_points(path: str, cloud: PointCloud, units: str = "mm") -> None:
    scale = {"m": 1.0, "mm": 1e3}[units]
    pts = cloud.points * scale
    if str(path).lower().endswith(".json"):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump([[float(v) for v in p] for p in pts], fh)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            for p in pts:
                writer.writerow([f"{v:.9g}" for v in p])
