"""Domain errors. All subclass ValueError so callers can catch broadly."""

from typing import Optional


class CdfParseError(ValueError):
    """Malformed IEEE Common Data Format input"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GridValidationError(ValueError):
    pass


class UnknownNodeError(ValueError):
    pass


class ZeroImpedanceError(ValueError):
    pass


class FramingError(ValueError):
    pass


class FrameLengthError(ValueError):
    pass


class IntegrityError(ValueError):
    pass


class QuantizationOverflowError(ValueError):
    pass


class UnknownCommandError(ValueError):
    pass


class ScenarioError(ValueError):
    pass


class UnalignedTimestampError(ValueError):
    pass


class UnsupportedRateError(ValueError):
    pass


class NoDataError(ValueError):
    pass


class SelectorError(ValueError):
    pass


class TriggerError(ValueError):
    pass


class IncompleteSetError(ValueError):
    pass


class TopicError(ValueError):
    pass


class UnobservableError(ValueError):
    """Normal matrix is singular for the given measurement set"""

    def __init__(self, message: str, pivot: Optional[int] = None, rank: Optional[int] = None):
        self.pivot = pivot
        self.rank = rank
        super().__init__(message)


class ConfigError(ValueError):
    pass
