"""Exception types shared across the package."""


class RanError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(RanError, ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RanError, ValueError):
    """A documented precondition was violated by the caller."""


class ParseError(RanError, ValueError):
    """Malformed input file.

    ``line`` is 1-based when the failure is tied to a text line; ``offset``
    is a byte offset when it is tied to a position in a binary-ish stream.
    """

    def __init__(self, message, *, path=None, line=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte offset {offset}")
        super().__init__(f"{': '.join(where)}: {message}" if where else message)
        self.path = path
        self.line = line
        self.offset = offset


class CheckpointVersionError(RanError):
    """Checkpoint was written by an incompatible format version."""


class ConfigMismatchError(RanError):
    """A checkpoint does not fit the model configuration or data it is used with."""


class NumericalError(RanError, ArithmeticError):
    """A non-finite value appeared during training."""
