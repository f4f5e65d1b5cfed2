"""Exception taxonomy for the engine.

Every error raised by the library derives from :class:`EngineError` so CLI
code can map library failures to a single exit code. Names mirror the
failure they report; messages carry the offending frame index / field / key
where one exists.
"""


class EngineError(Exception):
    """Base class for all engine errors."""


# ---------------------------------------------------------------- scene I/O

class MissingFileError(EngineError):
    pass


class DimensionMismatchError(EngineError):
    pass


class UnknownLabelIdError(EngineError):
    pass


class MalformedHeaderError(EngineError):
    pass


class MagicMismatchError(EngineError):
    pass


class IoFailureError(EngineError):
    pass


class DegenerateTrajectoryError(EngineError):
    pass


# ------------------------------------------------------- semantic matching

class ConflictingOverrideError(EngineError):
    pass


class UnknownClassError(EngineError):
    pass


class EmptyRowWithKeepSourceError(EngineError):
    pass


# ------------------------------------------------------------- attention

class EmptyRowError(EngineError):
    pass


class ShapeMismatchError(EngineError):
    pass


# ------------------------------------------------------------- diffusion

class InvalidParamsError(EngineError):
    pass


class DegenerateVarianceError(EngineError):
    pass


class StepOutOfRangeError(EngineError):
    pass


class ScheduleMismatchError(EngineError):
    pass


class WeightSumViolationError(EngineError):
    pass


# ------------------------------------------------------- warping / lifting

class EmptyListError(EngineError):
    pass


class EmptyHistoryError(EngineError):
    pass


class NoOverlapError(EngineError):
    pass


class AllMissingError(EngineError):
    pass


# --------------------------------------------------------------- metrics

class EmptyMaskError(EngineError):
    pass


class TooSmallError(EngineError):
    pass


class LengthMismatchError(EngineError):
    pass


class DegenerateAlignmentError(EngineError):
    pass


class EmptyErrorsError(EngineError):
    pass


# ------------------------------------------------------------------- CLI

class ConfigValidationError(EngineError):
    """Bad configuration; message names the offending key."""
