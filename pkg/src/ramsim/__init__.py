"""Hardware-free simulator for mixed-reality guided robotic instrument placement.

The package models the full pipeline of an MR-guided robotic-assisted medical
system with every sensor and robot replaced by a configurable simulated
counterpart: frame-chain calibration, subject-image registration, anatomical
target planning, human-aware collision modeling, collision-free trajectory
planning, and Monte Carlo error evaluation.
"""

from .geometry import (
    FrameGraph,
    PerAxisError,
    PoseError,
    RigidTransform,
    compose,
    invert,
    per_axis_error,
    pose_error,
)

__all__ = [
    "FrameGraph",
    "PerAxisError",
    "PoseError",
    "RigidTransform",
    "compose",
    "invert",
    "per_axis_error",
    "pose_error",
]

__version__ = "0.1.0"
