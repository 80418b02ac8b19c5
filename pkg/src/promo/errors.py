"""Exception types shared across the library."""


class PromoError(Exception):
    """Base class for all library errors."""


class ShapeError(PromoError):
    """Array shape does not match the operation's contract."""


class NonFiniteError(PromoError):
    """A NaN or Inf appeared where only finite values are allowed."""


class DegenerateRotationError(PromoError):
    """A 6D rotation block cannot be orthonormalized (near-zero or
    near-parallel columns), or a matrix is not a rotation."""


class VocabularyError(PromoError):
    """A word is outside the closed script vocabulary."""


class ScriptParseError(PromoError):
    """No recognizable clause could be recovered from a script text."""


class PlannerError(PromoError):
    """The planner produced an unusable response."""


class PlannerTransportError(PlannerError):
    """All transport attempts to the planner endpoint failed."""

    def __init__(self, message: str, attempts: int):
        super().__init__(message)
        self.attempts = attempts


class CheckpointError(PromoError):
    """A checkpoint file is malformed or incompatible."""


class StageError(PromoError):
    """A pipeline stage failed; carries the stage name for diagnostics."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
