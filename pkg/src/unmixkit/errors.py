"""Exception hierarchy shared by every unmixkit module."""


class UnmixError(Exception):
    """Base class for all unmixkit errors."""


class DimensionMismatch(UnmixError, ValueError):
    pass


class IndexOutOfRange(UnmixError, IndexError):
    pass


class EmptyInput(UnmixError, ValueError):
    pass


class OutOfRange(UnmixError, ValueError):
    pass


class InvalidConfig(UnmixError, ValueError):
    pass


class SingularNormalMatrix(UnmixError, ArithmeticError):
    pass


class Underdetermined(UnmixError, ValueError):
    pass


class MaxIterationsExceeded(UnmixError, RuntimeError):
    pass


class TooFewBands(UnmixError, ValueError):
    pass


class InvalidDegreesOfFreedom(UnmixError, ValueError):
    pass


class Infeasible(UnmixError, ValueError):
    pass


class EmptyCube(UnmixError, ValueError):
    pass


class InvalidThreshold(UnmixError, ValueError):
    pass


class InvalidK(UnmixError, ValueError):
    pass


class InvalidSparsity(UnmixError, ValueError):
    pass


class ParseError(UnmixError, ValueError):
    def __init__(self, message, line=None, column=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(loc)})" if loc else message)
        self.line = line
        self.column = column


class NegativeReflectance(ParseError):
    pass


class DuplicateName(ParseError):
    pass


class HeaderSyntax(ParseError):
    pass


class SizeMismatch(UnmixError, ValueError):
    pass


class UnsupportedDataType(UnmixError, ValueError):
    pass


class IoError(UnmixError, OSError):
    pass
