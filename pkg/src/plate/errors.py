"""Exception types shared across the package.

Every error that callers are expected to handle maps to one of these
classes; the CLI translates them to exit codes (format -> 2,
contract -> 3).
"""


class PlateError(Exception):
    """Base class for all package errors."""


class ContractViolationError(PlateError):
    """An argument violated a documented precondition."""


class FormatError(PlateError):
    """A file on disk does not match its declared format."""

    def __init__(self, message, byte_offset=None):
        if byte_offset is not None:
            message = f"{message} (at byte offset {byte_offset})"
        super().__init__(message)
        self.byte_offset = byte_offset


class NumericalError(PlateError):
    """A numerical routine failed to reach its accuracy target."""


class RankDeficiencyError(NumericalError):
    """A matrix expected to have full column rank did not.

    Carries the numerical rank so callers can report how degenerate
    the input was.
    """

    def __init__(self, message, numerical_rank):
        super().__init__(f"{message} (numerical rank {numerical_rank})")
        self.numerical_rank = numerical_rank


class ResourceError(PlateError):
    """An operation would exceed a hard resource budget."""


class TrainingError(PlateError):
    """Training diverged.  Carries the loss curve up to the failure."""

    def __init__(self, message, loss_curve=(), epoch=None):
        super().__init__(message)
        self.loss_curve = list(loss_curve)
        self.epoch = epoch
