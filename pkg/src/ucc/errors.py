"""Exception types shared across the package."""


class UccError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(UccError, ValueError):
    """Array dimensions do not agree."""


class EmptyBagError(UccError, ValueError):
    """A bag (or class) with no instances was supplied."""


class ContractError(UccError, ValueError):
    """An argument violates a documented precondition."""


class NumericError(UccError, ArithmeticError):
    """A computation produced a non-finite value."""


class TrainingDiverged(NumericError):
    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


class FormatError(UccError, ValueError):
    """A file does not follow its declared binary/text layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
