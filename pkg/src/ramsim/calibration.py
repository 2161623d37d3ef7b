"""Virtual-to-real calibration of the HMD marker and its evaluation metric.

The calibration estimates the transform between the HMD's local (rendering)
coordinate system and the optical marker fixed on the device, by having an
external tracker and the HMD's inside-out tracker observe one shared
reference marker.  With that transform in the chain, the virtual world can
be expressed in tracker coordinates and rendered content lands on its
physical counterparts.

Samples are treated as instantaneous measurement triples; device asynchrony
is a simulator concern (see sim_devices), not modeled here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyInputError
from .geometry import PoseError, RigidTransform, pose_error, quat_angle, quat_mul, quat_conj


@dataclass(frozen=True)
class CalibrationSample:
    """One simultaneous observation triple.

    n_T_oholo:  tracker -> HMD-mounted marker (external tracker)
    n_T_oref:   tracker -> free-standing reference marker (external tracker)
    h_T_oref:   HMD local frame -> reference marker (inside-out tracker)
    """

    n_T_oholo: RigidTransform
    n_T_oref: RigidTransform
    h_T_oref: RigidTransform


@dataclass(frozen=True)
class CalibrationResult:
    oholo_T_h: RigidTransform
    n_samples: int
    spread: PoseError      # worst per-sample deviation from the aggregate


@dataclass(frozen=True)
class EvaluationSample:
    """Closed-chain measurements for the overlay-error metric.

    voref_T_oref is the residual of manually aligning the virtual reference
    marker onto the physical one (identity for a perfect alignment);
    h_T_voholo is the rendered pose of the virtual HMD marker, which embeds
    the calibration estimate under test.
    """

    n_T_oholo: RigidTransform
    n_T_oref: RigidTransform
    voref_T_oref: RigidTransform
    w_T_voref: RigidTransform
    w_T_h: RigidTransform
    h_T_voholo: RigidTransform


def calibrate_single(s: CalibrationSample) -> RigidTransform:
    """HMD-marker-to-HMD-local transform from one measurement triple.

    oholo_T_h = inv(n_T_oholo) * n_T_oref * inv(h_T_oref)
    """
    return s.n_T_oholo.inverse() @ s.n_T_oref @ s.h_T_oref.inverse()


def calibrate_batch(samples: list[CalibrationSample]) -> CalibrationResult:
    """Aggregate per-sample estimates over repeated trials.

    Translation is the arithmetic mean.  Rotation is the chordal L2 mean:
    the dominant eigenvector of the accumulated quaternion outer products,
    with each quaternion sign-aligned first so the double cover cannot
    cancel contributions.
    """
    if not samples:
        raise EmptyInputError("calibrate_batch needs at least one sample")
    estimates = [calibrate_single(s) for s in samples]
    t_mean = np.mean([e.t for e in estimates], axis=0)

    ref = estimates[0].q
    acc = np.zeros((4, 4))
    for e in estimates:
        q = e.q if float(np.dot(e.q, ref)) >= 0.0 else -e.q
        acc += np.outer(q, q)
    eigvals, eigvecs = np.linalg.eigh(acc)
    q_mean = eigvecs[:, int(np.argmax(eigvals))]
    aggregate = RigidTransform(q_mean, t_mean)

    worst_t = 0.0
    worst_r = 0.0
    for e in estimates:
        worst_t = max(worst_t, float(np.linalg.norm(e.t - aggregate.t)))
        worst_r = max(worst_r, quat_angle(quat_mul(quat_conj(aggregate.q), e.q)))
    return CalibrationResult(aggregate, len(estimates), PoseError(worst_t, worst_r))


def world_to_tracker(w_T_h: RigidTransform, oholo_T_h: RigidTransform,
                     n_T_oholo: RigidTransform) -> RigidTransform:
    """Virtual world expressed in tracker coordinates.

    w_T_n = w_T_h * inv(oholo_T_h) * inv(n_T_oholo)
    """
    return w_T_h @ oholo_T_h.inverse() @ n_T_oholo.inverse()


def evaluate_calibration(e: EvaluationSample) -> PoseError:
    """Overlay error: pose of the virtual HMD marker relative to the real one.

    oholo_T_voholo = inv(n_T_oholo) * n_T_oref * inv(voref_T_oref)
                     * inv(w_T_voref) * w_T_h * h_T_voholo

    Returns the pose error of that product relative to identity; a perfectly
    consistent chain yields (0 m, 0 rad).
    """
    chain = (e.n_T_oholo.inverse() @ e.n_T_oref @ e.voref_T_oref.inverse()
             @ e.w_T_voref.inverse() @ e.w_T_h @ e.h_T_voholo)
    return pose_error(RigidTransform.identity(), chain)
