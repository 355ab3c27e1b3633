"""Exception hierarchy shared across the fusion toolkit."""


class CovorError(Exception):
    """Base class for all toolkit errors."""


class AngleNearPi(CovorError):
    """Rotation logarithm requested at or beyond the principal-branch boundary."""


class NonPositiveScale(CovorError):
    """Scale factor must be strictly positive."""


class NonSPDInformation(CovorError):
    """Information (weight) matrix is not symmetric positive definite."""


class CoincidentPositions(CovorError):
    """Two range endpoints coincide; the range Jacobian is undefined."""


class DanglingFactor(CovorError):
    """Range measurement could not be associated with any keyframe."""


class MissingPrior(CovorError):
    """An agent's first keyframe has no prior factor attached."""


class SingularSystem(CovorError):
    """Normal equations could not be factorized even at maximum damping."""


class NonFiniteCost(CovorError):
    """Graph cost evaluated to NaN or infinity."""


class UnknownKeyframe(CovorError):
    """Map point refers to a keyframe that is not part of the solution."""


class TooFewPoses(CovorError):
    """Trajectory too short for the requested split."""


class ParseError(CovorError):
    """Trajectory file could not be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class TimestampMismatch(CovorError):
    """Estimated and reference trajectories do not share timestamps."""


class MalformedFrame(CovorError):
    """Binary wire frame is truncated or structurally invalid."""


class UnknownMsgType(MalformedFrame):
    """Wire frame carries an unrecognized message-type tag."""


class GraphError(CovorError):
    """Factor graph is structurally inconsistent."""


class ConfigError(CovorError):
    """Experiment configuration is invalid."""
