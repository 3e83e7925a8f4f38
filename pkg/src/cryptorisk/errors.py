"""Exception hierarchy shared across the package."""


class CryptoRiskError(Exception):
    """Base class for all errors raised by cryptorisk."""


class ParseError(CryptoRiskError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class DomainError(CryptoRiskError, ValueError):
    """An input lies outside the domain where the quantity is defined."""


class DuplicateDateError(CryptoRiskError, ValueError):
    pass


class InsufficientDataError(CryptoRiskError, ValueError):
    pass


class AlignmentError(CryptoRiskError, ValueError):
    pass


class DegenerateDataError(CryptoRiskError, ValueError):
    pass


class ShapeError(CryptoRiskError, ValueError):
    pass


class SingularMatrixError(CryptoRiskError, ValueError):
    pass


class ConvergenceError(CryptoRiskError, RuntimeError):
    """Optimizer gave up; ``best`` holds the best point found so far."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class FitError(CryptoRiskError, RuntimeError):
    """A distribution fit failed; ``fallback`` may hold usable parameters."""

    def __init__(self, message, fallback=None):
        super().__init__(message)
        self.fallback = fallback


class NoMartingaleMeasureError(CryptoRiskError, ValueError):
    pass


class SolverError(CryptoRiskError, RuntimeError):
    pass


class InfeasibleError(CryptoRiskError, ValueError):
    pass


class NoSolutionError(CryptoRiskError, ValueError):
    pass
