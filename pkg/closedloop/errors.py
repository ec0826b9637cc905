"""Exception hierarchy for the closedloop package."""

from __future__ import annotations


class ClosedLoopError(Exception):
    """Base class for all errors raised by the library."""


class ValidationError(ClosedLoopError):
    """Error raised when a value violates an invariant."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
        self.message = message


class ParseError(ValidationError):
    """Error raised when a document is malformed."""


class SchemaVersionError(ParseError):
    """Error raised when a document declares an unsupported schema version."""

    def __init__(self, found: object, expected: int) -> None:
        super().__init__(
            "schema_version", f"unsupported version {found!r}, expected {expected}"
        )
        self.found = found
        self.expected = expected


class ConfigurationError(ValidationError):
    """Error raised for invalid engine, rollout, generation or experiment settings."""


class UsageError(ValidationError):
    """Error raised for an invalid command-line invocation."""


class ResampleError(ClosedLoopError):
    """Error raised when a track cannot be resampled."""


class AnchoringError(ClosedLoopError):
    """Error raised when a scenario cannot be anchored on its ego."""


class LaneQueryError(ClosedLoopError):
    """Error raised when a lane query is made against a map with no lanes."""


class GenerationError(ClosedLoopError):
    """Error raised when procedural generation cannot place its content."""


class NumericError(ClosedLoopError):
    """Error raised when kinematic inputs are not finite."""


class OverlapError(ClosedLoopError):
    """Error raised when car-following is queried for already-overlapping vehicles."""

    def __init__(self, gap: float) -> None:
        super().__init__(f"vehicles already overlap (gap {gap:.3f} m)")
        self.gap = gap


class EpisodeError(ClosedLoopError):
    """Error raised when an episode cannot be run."""


class PolicyError(EpisodeError):
    """Error raised when a policy fails while proposing candidates."""


class PhaseError(ClosedLoopError):
    """Error raised when an episode method is called in the wrong phase."""

    def __init__(self, phase: str, valid: tuple[str, ...]) -> None:
        super().__init__(
            f"Invalid phase: {phase}. Valid phases are: {', '.join(valid)}."
        )
        self.phase = phase
        self.valid = valid


class UndefinedCorrelationError(ClosedLoopError):
    """Error raised when a correlation is requested for zero-variance data."""


class LengthMismatchError(ClosedLoopError):
    """Error raised when trajectories that must align have different lengths."""


class EmptyBufferError(ClosedLoopError):
    """Error raised when reading the latest sample of an empty history buffer."""
