"""Exception hierarchy shared by every module."""


class PrismQuantError(Exception):
    """Base class; the CLI maps any subclass to a nonzero exit code."""


class InvalidInputError(PrismQuantError, ValueError):
    pass


class DomainError(PrismQuantError, ValueError):
    pass


class DefinitenessError(PrismQuantError, ValueError):
    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class ConvergenceError(PrismQuantError, RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class InsufficientDataError(PrismQuantError, ValueError):
    pass


class CorruptStreamError(PrismQuantError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
        self.position = position


class DictionaryMismatchError(PrismQuantError):
    pass


class InfeasibleBudgetError(PrismQuantError, ValueError):
    def __init__(self, message, min_rate=None):
        super().__init__(message)
        self.min_rate = min_rate


class IngestionError(PrismQuantError, ValueError):
    def __init__(self, message, record=None):
        if record is not None:
            message = f"record {record}: {message}"
        super().__init__(message)
        self.record = record
