"""Exception types shared across the package.

Every error raised by this library derives from :class:`CacoError`, so
callers (notably the CLI) can catch one base class and turn it into a
diagnostic plus a nonzero exit code.
"""


class CacoError(Exception):
    """Base class for all library errors."""


class DegenerateVectorError(CacoError, ValueError):
    """A vector's norm is too small to define a direction."""


class ConfigurationError(CacoError, ValueError):
    """Invalid parameter value, shape mismatch, or unusable setting."""


class ModeError(ConfigurationError):
    """An operation was called on a bank whose mode does not support it."""


class ConsistencyError(CacoError, ValueError):
    """Inputs that must agree (indices, traces, batch sizes) do not."""


class NumericalFaultError(CacoError, ArithmeticError):
    """Non-finite values appeared; the offending update was aborted."""


class ParseError(CacoError, ValueError):
    """A config, dataset, or checkpoint file could not be parsed."""


class CheckpointError(ParseError):
    """A checkpoint file is truncated, corrupt, or version-incompatible."""


class GenerationError(CacoError, RuntimeError):
    """Synthetic data generation could not satisfy its constraints."""
