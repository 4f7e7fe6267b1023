"""Exception hierarchy shared by every module of the package."""


class FedLCBQError(Exception):
    """Base class for all package errors."""


class ValidationError(FedLCBQError, ValueError):
    """Malformed input: bad dimensions, non-normalized rows, bad params."""


class ContractViolation(FedLCBQError, RuntimeError):
    """An operation was called outside its precondition (e.g. off-schedule)."""


class InvariantFailure(FedLCBQError, AssertionError):
    """A hard invariant checked by the diagnostics did not hold."""


class TraceParseError(FedLCBQError, ValueError):
    """A binary trace or dataset file could not be decoded.

    ``offset`` is the byte position at which decoding failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
