"""Exception types shared across the package."""


class NshashError(Exception):
    """Base class for all package errors."""


class ShapeError(NshashError, ValueError):
    """Operand shapes are incompatible. The message names both shapes."""


class ParameterError(NshashError, ValueError):
    """A hyperparameter or argument is outside its valid range."""


class NumericError(NshashError, ArithmeticError):
    """A tensor became non-finite. The message names the offending tensor."""


class FormatError(NshashError, ValueError):
    """A file failed to parse. The message carries the byte offset."""


class OracleError(NshashError, RuntimeError):
    """A verification oracle hit a non-finite evaluation."""


def require_shape(cond: bool, message: str) -> None:
    if not cond:
        raise ShapeError(message)


def require_param(cond: bool, message: str) -> None:
    if not cond:
        raise ParameterError(message)
