"""Exceptions raised by the cell-free simulator."""


class CellFreeConfigurationError(ValueError):
    """Raised when a configuration value is out of its admissible range."""


class CellFreeGeometryError(ValueError):
    """Raised when an AP is not strictly above a UE it links to."""


class CellFreeContractError(ValueError):
    """Raised when a matrix routine receives input outside its contract."""


class CellFreeDetectionError(ArithmeticError):
    """Raised when a detector is asked to decide against a zero gain."""


class CellFreeComplexityError(RuntimeError):
    """Raised when exhaustive joint detection would exceed its search guard."""


class CellFreeBudgetError(RuntimeError):
    """Raised when an experiment exceeds the configured compute budget."""

    def __init__(self, message: str, estimated_cost: float, budget: float) -> None:
        super().__init__(message)
        self.estimated_cost = estimated_cost
        self.budget = budget
