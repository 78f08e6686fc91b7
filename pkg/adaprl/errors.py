"""Exception hierarchy shared by every adaprl module.

The CLI maps these classes to exit codes (see ``adaprl.cli``):

    ConfigError    -> 1
    DataError      -> 2
    NumericalError -> 3
"""

from __future__ import annotations


class AdaprlError(Exception):
    """Base class for all errors raised on purpose by adaprl."""


class ShapeError(AdaprlError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(AdaprlError, ValueError):
    """A value lies outside the domain an operation accepts."""


class NonFiniteError(DomainError):
    """A computation produced NaN or Inf."""


class ConfigError(AdaprlError):
    """Invalid or incomplete run configuration."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class DataError(AdaprlError):
    """Dataset ingestion or schema problem."""

    def __init__(self, message: str, row: int | None = None, column: str | None = None):
        super().__init__(message)
        self.row = row
        self.column = column


class NumericalError(AdaprlError):
    """Training produced a non-finite value.

    Non-finite values are rejected where they arise, so the failing step has
    no loss to report; *last_losses* holds those of the last completed step.
    """

    def __init__(self, message: str, step: int | None = None, last_losses: dict[str, float] | None = None):
        super().__init__(message)
        self.step = step
        self.last_losses = dict(last_losses or {})
