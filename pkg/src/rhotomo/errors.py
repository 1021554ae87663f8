"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Invalid configuration, geometry or file contents."""


class NumericalError(ArithmeticError):
    """A non-finite value appeared where the algorithm requires finite ones."""
