"""
Error Types
===========
Every failure the pose pipeline can report, grouped by who has to act on it.

EXIT CODE CONVENTION:
- InputError      -> 2 (bad config, bad file, bad arguments)
- EstimationError -> 3 (inputs were fine, the estimate could not be produced)

All errors derive from ValueError so callers that already treat ValueError
as "reject this request" keep working.
"""


class PoseEstimationError(ValueError):
    """Base class for all library errors."""
    exit_code = 3


class InputError(PoseEstimationError):
    """Inputs, configs or files are malformed."""
    exit_code = 2


class EstimationError(PoseEstimationError):
    """A numerical stage could not produce a result."""
    exit_code = 3


# ============================================================================
# INPUT ERRORS
# ============================================================================

class ConfigError(InputError):
    pass


class UnsortedStream(InputError):
    pass


class EmptyResiduals(InputError):
    pass


class ZeroTruthTranslation(InputError):
    pass


class TooFewPoses(InputError):
    pass


class TimestampMismatch(InputError):
    pass


# ============================================================================
# ESTIMATION ERRORS
# ============================================================================

class NonPositiveDepth(EstimationError):
    pass


class DegenerateLine(EstimationError):
    pass


class LineAtInfinity(EstimationError):
    pass


class TooFewEvents(EstimationError):
    pass


class DegeneratePlane(EstimationError):
    pass


class QueueOverflow(EstimationError):
    pass


class NoInliers(EstimationError):
    pass


class RankDeficient(EstimationError):
    pass


class TooFewCorrespondences(EstimationError):
    pass


class NoVisibleLines(EstimationError):
    pass


class NoAssignments(EstimationError):
    pass


class SingularNormalMatrix(EstimationError):
    pass


class InitializationFailed(EstimationError):
    pass
