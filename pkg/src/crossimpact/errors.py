"""Exception types and the explicit infeasible-result variant."""

from dataclasses import dataclass


class ModelError(ValueError):
    """Raised when model inputs violate their invariants."""


class DimensionError(ModelError):
    """Raised when array shapes do not agree."""


class IllConditionedError(ModelError):
    """Raised when a low-rank inner system is numerically singular."""


class ConvergenceError(RuntimeError):
    """Raised when an iterative solver hits its iteration cap."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class Infeasible:
    """An unbounded (+infinity) cost or limit, with the reason it is unbounded."""

    reason: str
    residual: float = float("nan")

