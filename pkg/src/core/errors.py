"""
Exception family for the anytime-prediction toolkit.

Each exception also derives from the builtin a caller would naturally catch
(ValueError for bad inputs, RuntimeError for state problems), so code that
does not know about this module still handles them sensibly.
"""

from typing import Optional


class AnytimeError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(AnytimeError, ValueError):
    """Shapes or lengths of the arguments do not fit together."""


class DomainError(AnytimeError, ValueError):
    """A value lies outside the domain of the function (e.g. a log of zero)."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


class TrackerNotWarmedUp(AnytimeError, RuntimeError):
    pass


class DivergenceError(AnytimeError, RuntimeError):
    """Training produced a non-finite value."""

    def __init__(
        self,
        message: str,
        epoch: Optional[int] = None,
        step: Optional[int] = None,
        layer: Optional[int] = None,
    ):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.layer = layer


class NoPredictionYet(AnytimeError, LookupError):
    """The budget is too small for the ensemble to have produced any output."""


class IdxFormatError(AnytimeError, ValueError):
    pass


class ReportWriteError(AnytimeError, OSError):
    def __init__(self, message: str, path: str):
        super().__init__(message)
        self.path = path
