"""Exception types shared across the package."""


class AwnetError(Exception):
    pass


class ShapeError(AwnetError, ValueError):
    """Operand shapes are incompatible with an operation."""


class UsageError(AwnetError, RuntimeError):
    """An API was called in a way its contract forbids."""


class BuildError(AwnetError, ValueError):
    """An architecture description is inconsistent."""


class FormatError(AwnetError, ValueError):
    """A file does not follow its binary layout.

    ``offset`` is the byte position where decoding failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class DivergenceError(AwnetError, ArithmeticError):
    """Training produced a non-finite loss."""
