"""Exception hierarchy.

The CLI maps the three families onto exit codes: configuration problems
exit 1, data problems exit 2, solver problems exit 3.
"""
from __future__ import annotations


def _rebuild(cls, args, state):
    obj = cls.__new__(cls)
    Exception.__init__(obj, *args)
    obj.__dict__.update(state)
    return obj


class InvRiskError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    # subclasses take structured constructor arguments; rebuild from state so
    # errors raised in worker processes survive the trip back
    def __reduce__(self):
        return _rebuild, (type(self), self.args, self.__dict__)

    def to_dict(self) -> dict:
        return {"error": type(self).__name__, "message": str(self)}


class ConfigError(InvRiskError):
    exit_code = 1


class DataError(InvRiskError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["line"] = self.line
        return d


class ValidationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class UnresolvedTickerError(DataError):
    def __init__(self, tickers):
        self.tickers = sorted(tickers)
        super().__init__("tickers missing from price panel: " + ", ".join(self.tickers))

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["tickers"] = self.tickers
        return d


class SolverError(InvRiskError):
    exit_code = 3


class InfeasibleError(SolverError):
    pass


class InfeasibleTargetError(InfeasibleError):
    def __init__(self, z: float, lo: float, hi: float):
        self.z, self.lo, self.hi = z, lo, hi
        super().__init__(f"target return {z!r} outside attainable range [{lo!r}, {hi!r}]")

    def to_dict(self) -> dict:
        d = super().to_dict()
        d.update(z=self.z, attainable=[self.lo, self.hi])
        return d


class UnboundedError(SolverError):
    pass


class NumericalFailure(SolverError):
    def __init__(self, message: str, residuals: dict | None = None):
        self.residuals = residuals or {}
        super().__init__(message)

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["residuals"] = self.residuals
        return d


class SingularMatrixError(SolverError):
    pass


class UndefinedMetricError(InvRiskError):
    exit_code = 2
