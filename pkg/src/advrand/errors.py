"""Exception types raised across the package."""


class AdvRandError(Exception):
    """Base class for package errors."""


class InvalidParameterError(AdvRandError, ValueError):
    """Rendering parameters or inputs outside their valid ranges."""


class InvalidLabelError(AdvRandError, ValueError):
    pass


class ShapeError(AdvRandError, ValueError):
    """Tensor dimensions do not chain."""


class NumericError(AdvRandError, FloatingPointError):
    """Non-finite values appeared in a gradient or state."""


class ConfigError(AdvRandError, ValueError):
    """Invalid experiment configuration.

    ``line`` is the 1-based line of the offending entry when the error comes
    from a config file.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        loc = ""
        if path is not None and line is not None:
            loc = f"{path}:{line}: "
        elif line is not None:
            loc = f"line {line}: "
        super().__init__(loc + message)


class BudgetMismatchError(ConfigError):
    """Runs with different per-iteration render budgets cannot be compared."""
