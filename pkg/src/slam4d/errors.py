"""Exception types shared across the toolkit."""


class Slam4dError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(Slam4dError):
    """Input violates a documented precondition (shape, range, finiteness)."""


class BehindCameraError(Slam4dError):
    """A 3D point lies at or behind the camera plane."""


class InvalidDepthError(Slam4dError):
    """Inverse depth is non-positive where a positive value is required."""


class SolverStalledError(Slam4dError):
    """The damped Gauss-Newton solver could not make progress.

    Carries a ``diagnostics`` dict (per-iteration energies, damping history).
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DegenerateFrameError(Slam4dError):
    """Too few valid pixels remain for a pose-only solve."""


class InsufficientOverlapError(Slam4dError):
    """Fewer than three trajectory pose pairs could be associated."""


class EmptyInputError(Slam4dError):
    """An operation received an empty or fully invalid input."""


class ParseError(Slam4dError):
    """A file could not be parsed; ``line`` holds the offending line number."""

    def __init__(self, message, line=None):
        super().__init__(message)
        self.line = line


class DegenerateSpecError(Slam4dError):
    """A synthetic scene specification places the camera inside geometry."""
