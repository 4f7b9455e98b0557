"""Exception types shared across the package.

Every category maps to a distinct CLI exit code (see cli.py), so keep the
hierarchy flat and the categories coarse.
"""


class MotionStyleError(Exception):
    """Base class for all errors raised by this package."""


class InvalidRotationError(MotionStyleError):
    """A 6D rotation or rotation matrix is degenerate or not a rotation."""


class DegenerateDegreeError(MotionStyleError):
    """Adjacency normalization hit a zero-degree (isolated) joint."""


class ShapeError(MotionStyleError):
    """Tensor shape does not match the owning skeleton or declared dims."""


class TopologyError(MotionStyleError):
    """A clip or token was built for a different skeleton topology."""


class EmptyPartError(MotionStyleError):
    """A body-part group contains no joints (part-map configuration bug)."""


class BvhParseError(MotionStyleError):
    """BVH document is syntactically invalid. Carries a 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnsupportedChannelError(BvhParseError):
    """BVH declares a channel name this parser does not understand."""


class TruncatedDataError(BvhParseError):
    """BVH MOTION section has fewer values than the header declares."""


class ConfigError(MotionStyleError):
    """Invalid run/model configuration value."""


class NumericalError(MotionStyleError):
    """A numerical routine failed to stabilize (e.g. covariance sqrt)."""
