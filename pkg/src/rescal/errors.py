"""Exception hierarchy shared by the estimators and the CLI."""


class RescalError(Exception):
    """Base class for all package errors."""


class DomainError(RescalError, ValueError):
    """Input outside the domain of an operation (chart mismatch, bad matrix)."""


class IntegrationError(RescalError, ArithmeticError):
    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t={time:.6g})")
        self.time = time


class HorizonError(RescalError, IndexError):
    """A metric was requested beyond the horizon a trajectory covers."""


class SingularBaseError(RescalError, ZeroDivisionError):
    """A rescaled quantity needed the speed at a (numerically) singular point."""


class InfeasibleCoverError(RescalError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class InsufficientDataError(RescalError, ValueError):
    pass


class ConstructionError(RescalError):
    """An explicit construction failed its own membership verification."""


class SamplingError(RescalError):
    pass


class DegenerateMeasureError(RescalError, ValueError):
    pass


class UnsupportedError(RescalError, NotImplementedError):
    pass


class ConfigError(RescalError, ValueError):
    pass
