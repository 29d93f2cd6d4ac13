"""Exception hierarchy shared by every osad module."""


class OsadError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(OsadError, ValueError):
    """An argument violates a documented precondition (shape, range, ordering)."""


class DegenerateInputError(OsadError, ValueError):
    """Input is well-formed but geometrically or numerically degenerate."""


class InvalidStateError(OsadError, RuntimeError):
    """Operation requires state that has not been established yet."""


class UndefinedMetricError(OsadError, ValueError):
    """A metric has no defined value for the given data (e.g. zero denominators)."""


class TrainingFailureError(OsadError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, iteration: int, message: str = "non-finite loss"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
