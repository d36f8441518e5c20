"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: argument/config problems exit 2,
violated numerical properties exit 3, file-format and I/O problems exit 4.
"""


class VcutError(Exception):
    """Base class for all package errors."""


class ShapeError(VcutError):
    """Operands have incompatible or invalid shapes."""


class ArgumentError(VcutError):
    """A value outside an operation's documented domain."""


class ConfigError(VcutError):
    """A model or sampler configuration that cannot be built."""


class TransformError(VcutError):
    """Graph surgery applied to an ineligible model."""


class StateError(VcutError):
    """An operation invoked before its prerequisites exist."""


class NumericError(VcutError):
    """Non-finite values where finite ones are required."""


class FormatError(VcutError):
    """A malformed tensor, spec, or report file."""
