"""Typed error categories.

Every error carries a ``category`` string and a process ``exit_code`` so the
CLI can map failures to stable nonzero statuses.
"""


class PrognosticError(Exception):
    category = "error"
    exit_code = 1


class SchemaError(PrognosticError):
    """Input file header or document layout does not match the schema."""

    category = "schema"
    exit_code = 2


class RowError(PrognosticError):
    """A single data row could not be parsed."""

    category = "row"
    exit_code = 3

    def __init__(self, row_index, message):
        super().__init__(f"row {row_index}: {message}")
        self.row_index = row_index


class ConfigError(PrognosticError):
    category = "config"
    exit_code = 4


class SizingError(PrognosticError):
    category = "sizing"
    exit_code = 5


class FitError(PrognosticError):
    category = "fit"
    exit_code = 6


class NumericError(PrognosticError):
    """A nonfinite intermediate appeared; ``parameter`` names the culprit."""

    category = "numeric"
    exit_code = 7

    def __init__(self, parameter, message=None):
        super().__init__(message or f"nonfinite intermediate caused by parameter {parameter!r}")
        self.parameter = parameter


class UndefinedMetricError(PrognosticError):
    category = "undefined-metric"
    exit_code = 8


class ValidationError(PrognosticError):
    """A value violates a documented invariant (length, range, finiteness)."""

    category = "validation"
    exit_code = 9


class DomainError(ValidationError):
    category = "domain"
