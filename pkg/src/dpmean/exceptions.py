"""Exception types raised by dpmean."""


class DPMeanError(Exception):
    """Base class for all library errors."""


class SingularSeriesError(DPMeanError, ValueError):
    """Leading coefficient of a Toeplitz series is zero."""


class PreconditionError(DPMeanError, ValueError):
    """An input violates a documented precondition."""


class SizeCapError(PreconditionError):
    """A dense or enumerative path was asked to exceed its size cap."""


class ConfigurationError(DPMeanError, ValueError):
    """An estimator configuration can never satisfy its requirements."""


class NormViolationError(PreconditionError):
    """An observation exceeds the clipping norm in reject mode."""


class StreamExhaustedError(DPMeanError, RuntimeError):
    """More observations were supplied than the declared stream length."""


class ParseError(DPMeanError, ValueError):
    """Malformed stream input."""

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
