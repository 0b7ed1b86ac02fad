"""Exception types raised across the package."""


class DyaditError(Exception):
    """Base class for all package errors."""


class DegenerateInput(DyaditError, ValueError):
    pass


class InvalidRotation(DyaditError, ValueError):
    pass


class TooShort(DyaditError, ValueError):
    pass


class ShapeError(DyaditError, ValueError):
    pass


class ShapeMismatch(ShapeError):
    pass


class DimMismatch(ShapeError):
    pass


class ConfigError(DyaditError, ValueError):
    pass


class OutOfRange(DyaditError, IndexError):
    pass


class IndexOutOfRange(OutOfRange):
    pass


class InsufficientSamples(DyaditError, ValueError):
    pass


class NumericalFailure(DyaditError, ArithmeticError):
    pass


class FormatError(DyaditError, ValueError):
    pass


class UnknownProvider(DyaditError, KeyError):
    pass


class Divergence(DyaditError, ArithmeticError):
    """Training loss became non-finite."""

    def __init__(self, step: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at step {step}")
        self.step = step
        self.loss = loss


class IoError(DyaditError, OSError):
    pass
