"""Exception hierarchy shared by all ramsim modules."""

from __future__ import annotations


class RamsimError(Exception):
    """Base class for every error raised by this package."""


# -- frame graph --------------------------------------------------------------

class DisconnectedFramesError(RamsimError):
    """No path exists between the two queried frames."""


class AmbiguousPathError(RamsimError):
    """Multiple paths between two frames disagree beyond tolerance."""


# -- registration -------------------------------------------------------------

class TooFewPointsError(RamsimError):
    """Paired-point registration needs at least three correspondences."""


class DegenerateGeometryError(RamsimError):
    """Source points are (near) collinear; rigid fit is not unique."""


# -- target planning ----------------------------------------------------------

class NoIntersectionError(RamsimError):
    """The clicker ray does not hit the anatomy mesh."""


class DegenerateRollError(RamsimError):
    """Roll reference is (near) parallel to the tool axis."""


class DegenerateLineError(RamsimError):
    """Entry and injection points coincide; the tool axis is undefined."""


# -- human model --------------------------------------------------------------

class DegenerateHintError(RamsimError):
    """Elbow hint is (near) parallel to the shoulder-wrist axis."""


# -- robot arm ----------------------------------------------------------------

class JointLimitViolationError(RamsimError):
    """A joint value lies outside its limit interval."""


class IKNoConvergenceError(RamsimError):
    """Inverse kinematics did not reach the requested tolerance.

    Carries the best residual seen so callers can report how close it got.
    """

    def __init__(self, message: str, best_translation: float, best_rotation: float):
        super().__init__(message)
        self.best_translation = best_translation
        self.best_rotation = best_rotation


# -- trajectory planning ------------------------------------------------------

class StartInCollisionError(RamsimError):
    """The start configuration violates the scene clearance."""


class GoalUnreachableError(RamsimError):
    """No IK seed converged to the requested flange pose."""


class GoalInCollisionError(RamsimError):
    """Every IK solution for the goal pose is in collision."""


class PlanningTimeoutError(RamsimError):
    """Planner exhausted its node budget without connecting the trees."""


class EditUnreachableError(RamsimError):
    """IK failed for the edited waypoint pose."""


class ExecutionAbortedError(RamsimError):
    """Mid-path revalidation against a refreshed scene failed."""


# -- simulated devices --------------------------------------------------------

class MarkerNotVisibleError(RamsimError):
    """The scenario declares the queried marker occluded."""


class OutOfRangeError(RamsimError):
    """Marker depth is outside the inside-out tracker's working window."""


class EmptyInputError(RamsimError):
    """An operation that aggregates samples received none."""


# -- network protocol ---------------------------------------------------------

class ProtocolError(RamsimError):
    """Base class for wire-format violations."""


class BadMagicError(ProtocolError):
    pass


class BadChecksumError(ProtocolError):
    pass


class ShortPacketError(ProtocolError):
    pass


class FrameTooLargeError(ProtocolError):
    pass


class MalformedJsonError(ProtocolError):
    pass


class UnknownTypeError(ProtocolError):
    pass


class TransportClosedError(ProtocolError):
    pass


class VersionMismatchError(ProtocolError):
    pass


# -- scenario harness ---------------------------------------------------------

class ScenarioError(RamsimError):
    """A scenario config is invalid or references missing files."""


class StageError(RamsimError):
    """Wraps an error from one pipeline stage with its stage label."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
