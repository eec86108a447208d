"""Exception hierarchy shared by every stage of the pipeline."""


class IsmmError(Exception):
    """Base class for all package errors."""


class ParseError(IsmmError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedRow(ParseError):
    pass


class NonPositivePrice(ParseError):
    pass


class EmptyFile(ParseError):
    pass


class DisorderedTicks(ParseError):
    pass


class MissingOpen(IsmmError):
    pass


class DegenerateReturns(IsmmError):
    pass


class DegenerateIndex(IsmmError):
    pass


class InsufficientData(IsmmError):
    pass


class InsufficientHistory(IsmmError):
    def __init__(self, needed, available):
        self.needed = needed
        self.available = available
        super().__init__(
            f"insufficient history: need {needed} entries, have {available}")


class MissingCell(IsmmError):
    pass


class UnreachableState(IsmmError):
    pass


class DegenerateVariance(IsmmError):
    pass


class GridMismatch(IsmmError):
    pass


class EnvelopeExceeded(IsmmError):
    pass
