"""Exception hierarchy shared across the package.

Every error carries a human-readable message naming the offending field or
dimension; the CLI maps these classes onto its exit-code contract.
"""


class MafError(Exception):
    """Base class for all package errors."""


class ShapeError(MafError):
    """Tensor shapes are inconsistent with an operation's contract."""


class ConfigError(MafError):
    """A configuration value violates an invariant (bad kernel size, widths, ...)."""


class AutogradError(MafError):
    """Misuse of the reverse-mode tape (non-scalar backward, released graph, ...)."""


class NumericalError(MafError):
    """NaN/Inf detected in checked mode, or a divergent computation."""


class SerializationError(MafError):
    """Weight-file or config parsing failed; message includes the byte offset when known."""
