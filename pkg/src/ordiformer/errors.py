"""Exception hierarchy shared across the package.

Each class maps to one failure category so the CLI can translate
exceptions into stable exit codes without inspecting messages.
"""


class OrdiformerError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(OrdiformerError):
    """Invalid configuration value, unknown key, or unsupported request."""


class DataFormatError(OrdiformerError):
    """Malformed input file: image, label table, prompt file or checkpoint."""


class ShapeError(OrdiformerError):
    """Tensor operands have incompatible shapes or ranks."""


class DomainError(OrdiformerError):
    """Operand values outside an operation's mathematical domain."""


class NumericError(OrdiformerError):
    """A computation produced NaN or infinity."""


class DivergenceError(OrdiformerError):
    """Training aborted because the loss became non-finite."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class DegenerateInputError(OrdiformerError):
    """Statistical routine received input with no usable variation."""
