"""Argument validation shared by the simulator modules."""

import numbers

import numpy as np

from .exceptions import CellFreeConfigurationError


def _validate_positive_integer(value: int, param_name: str = "value") -> int:
    """Validate that a value is a positive integer."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise CellFreeConfigurationError(f"{param_name} must be an integer")
    if value <= 0:
        raise CellFreeConfigurationError(
            f"{param_name} must be a positive integer, got: {value}"
        )
    return int(value)


def _validate_positive_number(
    value: int | float, param_name: str = "value"
) -> float:
    """Validate that a number is positive and finite."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise CellFreeConfigurationError(f"{param_name} must be a number")

    if not np.isfinite(value) or value <= 0:
        raise CellFreeConfigurationError(
            f"{param_name} must be positive, got: {value}"
        )

    return float(value)


def _validate_non_negative_number(
    value: int | float, param_name: str = "value"
) -> float:
    """Validate that a number is non-negative and finite."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise CellFreeConfigurationError(f"{param_name} must be a number")
    if not np.isfinite(value) or value < 0:
        raise CellFreeConfigurationError(
            f"{param_name} must be non-negative, got: {value}"
        )
    return float(value)


def _validate_positive_array(values: np.ndarray, param_name: str = "values") -> np.ndarray:
    """Validate that every entry of an array is positive and finite."""
    arr = np.asarray(values, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(arr <= 0)):
        raise CellFreeConfigurationError(f"{param_name} must be positive everywhere")
    return arr
