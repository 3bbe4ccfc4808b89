"""Exception hierarchy. Every library error derives from :class:`InfsaError`."""


class InfsaError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(InfsaError, ValueError):
    pass


class SingularMatrixError(InfsaError, ArithmeticError):
    pass


class DegenerateOperatorError(InfsaError, ArithmeticError):
    """The operator maps the current iterate to zero."""


class DivergentSeriesError(InfsaError, ArithmeticError):
    """gamma * rho(A) >= 1: the discounted path series has no limit."""


class CapacityError(InfsaError, ValueError):
    pass


class ArityError(InfsaError, ValueError):
    pass


class InvalidChainError(InfsaError, ValueError):
    def __init__(self, row, row_sum, gamma):
        self.row = row
        self.row_sum = row_sum
        self.gamma = gamma
        super().__init__(
            f"negative absorption probability at row {row}: "
            f"gamma * sigma = {gamma} * {row_sum!r} = {gamma * row_sum!r} > 1"
        )


class WalkCapError(InfsaError, RuntimeError):
    pass


class ConfigError(InfsaError, ValueError):
    pass


class FormatError(InfsaError, ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at byte offset {offset})")


class UndefinedCorrelationError(InfsaError, ArithmeticError):
    pass


class EvaluationError(InfsaError, ArithmeticError):
    pass


class UsageError(InfsaError, ValueError):
    pass
