"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Array shapes do not match the manifold or problem dimensions."""


class DomainError(ValueError):
    """An argument lies outside the domain of an operation."""


class CapabilityError(NotImplementedError):
    """The requested operation has no implementation for this manifold."""


class RankDeficiencyError(ArithmeticError):
    """A fixed-rank operation produced a matrix of lower rank."""


class ConfigError(ValueError):
    """Invalid experiment, schedule or check configuration."""


class ParseError(ValueError):
    """Malformed input file.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int, optional
        1-based line number where parsing failed.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericError(FloatingPointError):
    """Non-finite values encountered during an optimization run."""

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
