"""Exception types shared across the package."""


class DcflError(Exception):
    """Base class for all package errors."""


class InvalidBoxError(DcflError):
    """Oriented box with non-finite or non-positive extents."""


class InvalidQuadError(DcflError):
    """Quadrilateral that is degenerate, concave, or self-intersecting."""


class ConditioningError(DcflError):
    """Covariance matrix too close to singular for stable inversion."""


class ConfigError(DcflError):
    """Invalid configuration value or combination."""


class ShapeError(DcflError):
    """Array shape inconsistent with the prior field or scene."""


class ParseError(DcflError):
    """Malformed annotation or data file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CapacityError(DcflError):
    """Scene synthesis could not place the requested objects."""
