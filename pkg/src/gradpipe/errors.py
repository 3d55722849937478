"""Exception taxonomy shared by all gradpipe modules."""


class GradpipeError(Exception):
    """Base class for all gradpipe errors."""


class ShapeError(GradpipeError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(GradpipeError, ValueError):
    """A value is outside the operation's domain (empty tensor, sigma < 0, ...)."""


class ConfigError(GradpipeError, ValueError):
    """A run configuration is invalid; raised before any compute starts."""


class ContractError(GradpipeError, RuntimeError):
    """An internal call contract was violated (mismatched tape, bad gradient shapes)."""


class ScheduleError(GradpipeError, RuntimeError):
    """The pipeline schedule invariants were violated; always fatal."""


class NumericError(GradpipeError, ArithmeticError):
    """Non-finite values appeared mid-run; carries the iteration index."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration


class IdxParseError(GradpipeError, ValueError):
    """An IDX file failed to parse; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class IoError(GradpipeError, OSError):
    """A run artifact could not be read or written."""
