"""Tests for the shared argument validators."""

import numpy as np
import pytest

from cellfree import _validation
from cellfree._validation import (
    _validate_non_negative_number,
    _validate_positive_array,
    _validate_positive_integer,
    _validate_positive_number,
)
from cellfree.exceptions import CellFreeConfigurationError


def test_validators_accept_and_convert():
    assert _validate_positive_integer(np.int64(3)) == 3
    assert _validate_positive_number(2) == 2.0
    assert _validate_non_negative_number(0) == 0.0
    np.testing.assert_array_equal(_validate_positive_array([1, 2]), [1.0, 2.0])


@pytest.mark.parametrize(
    "validator, value",
    [
        (_validate_positive_integer, True),
        (_validate_positive_integer, 0),
        (_validate_positive_integer, 1.5),
        (_validate_positive_number, False),
        (_validate_positive_number, float("inf")),
        (_validate_positive_number, 0.0),
        (_validate_non_negative_number, -1e-9),
        (_validate_non_negative_number, float("nan")),
        (_validate_positive_array, np.array([1.0, 0.0])),
    ],
)
def test_validators_reject(validator, value):
    with pytest.raises(CellFreeConfigurationError, match="eta"):
        validator(value, "eta")


def test_only_used_validators_are_defined():
    defined = {name for name in vars(_validation) if name.startswith("_validate_")}
    assert defined == {
        "_validate_non_negative_number",
        "_validate_positive_array",
        "_validate_positive_integer",
        "_validate_positive_number",
    }
