"""Exception hierarchy shared by every module."""


class MoftError(Exception):
    """Base class for all library errors."""


class InvalidInput(MoftError, ValueError):
    pass


class ShapeError(MoftError, ValueError):
    pass


class InvalidRank(MoftError, ValueError):
    pass


class InvalidBasis(MoftError, ValueError):
    pass


class InvalidRotation(MoftError, ValueError):
    pass


class DegenerateColumn(MoftError, ValueError):
    pass


class FormatError(MoftError, ValueError):
    """Malformed tensor or checkpoint file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset=None):
        self.detail = message
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalFailure(MoftError, ArithmeticError):
    pass


class Diverged(NumericalFailure):
    def __init__(self, step, loss):
        super().__init__(f"training diverged at step {step} (loss={loss!r})")
        self.step = step
        self.loss = loss


class Overflow(MoftError, OverflowError):
    pass


class RankDeficientWarning(UserWarning):
    """Requested rank exceeds the numerical rank of the source matrix."""
