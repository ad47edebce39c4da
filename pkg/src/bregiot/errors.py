"""Exception hierarchy shared across the package."""


class BregIOTError(Exception):
    """Base class for all package errors."""


class DomainError(BregIOTError, ValueError):
    """An argument lies outside the (interior of the) domain of a generator.

    ``index`` holds the offending matrix index when one is known.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DimensionError(BregIOTError, ValueError):
    pass


class GeneratorError(BregIOTError, ValueError):
    """The generator does not satisfy the hypothesis required by an operation."""


class UnsupportedCase(BregIOTError, ValueError):
    pass


class ConvergenceError(BregIOTError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class MaxIterationsExceeded(ConvergenceError):
    """Iteration cap reached before the stopping rule fired.

    ``report`` carries the residual trace of the aborted run.
    """

    def __init__(self, message, report=None, residual=None):
        super().__init__(message, residual=residual)
        self.report = report


class LineSearchFailure(ConvergenceError):
    def __init__(self, message, state=None, block=None):
        super().__init__(message)
        self.state = state
        self.block = block


class EigenFailure(BregIOTError, RuntimeError):
    pass


class DataError(BregIOTError, ValueError):
    pass


class IoError(BregIOTError, OSError):
    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
