"""Exception types shared across the package."""


class StanceRLError(Exception):
    """Base class for package errors."""


class ShapeError(StanceRLError):
    """Operands have incompatible shapes or extents."""


class NumericError(StanceRLError):
    """A value became NaN/Inf or left its valid domain."""


class ValidationError(StanceRLError):
    """Bad configuration, file contents, or enum value."""
