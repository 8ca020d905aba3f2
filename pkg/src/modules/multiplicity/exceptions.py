"""
Custom exceptions for the multiplicity module.
"""
from typing import Any, Dict, Iterable, Optional


class MultiplicityError(Exception):
    """Base exception for multiplicity module."""
    pass


class DimensionError(MultiplicityError):
    """Exception raised when vector lengths or feature dimensions disagree."""
    pass


class DegenerateInputError(MultiplicityError):
    """Exception raised for inputs that make a quantity meaningless (e.g. k == 0)."""
    pass


class InfeasibleSpaceError(MultiplicityError):
    """Exception raised when a requested allocation space is empty or counts are infeasible."""
    pass


class EmptyInputError(MultiplicityError):
    """Exception raised when an operation receives an empty collection."""
    pass


class UndefinedRatioError(MultiplicityError):
    """Exception raised when a group needed by a ratio metric has no selected members."""
    pass


class MissingMetricError(MultiplicityError):
    """Exception raised when an archive lacks the metric a figure needs."""
    pass


class DataIngestionError(MultiplicityError):
    """Exception raised for malformed input data, pointing at the offending cell."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)
        self.row = row
        self.column = column


class TrainingFailureError(MultiplicityError):
    """Exception raised when optimisation diverges."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics: Dict[str, Any] = diagnostics or {}


class UnknownFigureError(MultiplicityError):
    """Exception raised for an unknown figure id."""

    def __init__(self, figure_id: str, valid_ids: Iterable[str]):
        self.valid_ids = sorted(valid_ids)
        super().__init__(
            f"Figure '{figure_id}' not found. Available figures: {', '.join(self.valid_ids)}"
        )
