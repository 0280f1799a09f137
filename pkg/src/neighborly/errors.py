"""Exception hierarchy shared across the package."""


class NeighborlyError(Exception):
    """Base class for all package errors."""


class OutOfScaleError(NeighborlyError, ValueError):
    """A rating value falls outside the configured rating scale."""


class UnknownEntityError(NeighborlyError, KeyError):
    """A user or profile id is not present in the data."""

    def __str__(self) -> str:  # KeyError quotes its payload; keep the message readable
        return Exception.__str__(self)


class IngestError(NeighborlyError, ValueError):
    """A malformed record was encountered during dataset ingestion."""

    def __init__(self, line_no: int, line: str, reason: str):
        super().__init__(f"line {line_no}: {reason}: {line!r}")
        self.line_no = line_no
        self.line = line
        self.reason = reason


class UndefinedMetricError(NeighborlyError, ArithmeticError):
    """NMAE requested over zero counted predictions."""


class ProtocolError(NeighborlyError):
    """Malformed or illegal frame on the wire."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


class RemoteError(NeighborlyError):
    """An error frame received from the server."""

    def __init__(self, code: int, message: str):
        super().__init__(f"[{code}] {message}")
        self.code = code


class SessionError(NeighborlyError):
    """Illegal operation for the current duel-session phase."""


class HygieneViolationError(NeighborlyError):
    """A benchmark prediction observed its own held-out target."""
