"""Exception hierarchy shared by every module.

Each error carries the offending quantity as an attribute so callers and
tests can inspect it without parsing messages.
"""

from __future__ import annotations


class DrofaError(Exception):
    """Base class for all errors raised by this package."""


class EmptyVector(DrofaError, ValueError):
    def __init__(self) -> None:
        super().__init__("vector must be nonempty")


class NegativeEntry(DrofaError, ValueError):
    def __init__(self, index: int, value: float) -> None:
        self.index = index
        self.value = value
        super().__init__(f"entry {index} is negative ({value!r})")


class SumOutOfTolerance(DrofaError, ValueError):
    def __init__(self, actual_sum: float) -> None:
        self.actual_sum = actual_sum
        super().__init__(f"entries sum to {actual_sum!r}, expected 1")


class DimensionMismatch(DrofaError, ValueError):
    def __init__(self, expected: int, got: int) -> None:
        self.expected = expected
        self.got = got
        super().__init__(f"expected dimension {expected}, got {got}")


class NonFiniteInput(DrofaError, ValueError):
    def __init__(self, what: str = "input") -> None:
        super().__init__(f"{what} contains NaN or Inf")


class BadIndex(DrofaError, IndexError):
    pass


class NonFiniteLoss(DrofaError, FloatingPointError):
    pass


class NonFiniteGradient(DrofaError, FloatingPointError):
    pass


class BoundaryKL(DrofaError, ValueError):
    def __init__(self, index: int) -> None:
        self.index = index
        super().__init__(f"KL regularizer undefined at zero weight (index {index})")


class SolverNoConvergence(DrofaError, RuntimeError):
    def __init__(self, residual: float, iterations: int | None = None) -> None:
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"solver did not converge (residual {residual:.3e}, iterations {iterations})")


class NoConvergence(SolverNoConvergence):
    """Raised by the saddle-point oracle; ``residuals`` holds both certificates."""

    def __init__(self, residuals: tuple[float, float], iterations: int) -> None:
        self.residuals = residuals
        super().__init__(max(residuals), iterations)


class BadConfig(DrofaError, ValueError):
    pass


class ConfigError(BadConfig):
    pass


class SchemaError(ConfigError):
    def __init__(self, key: str, reason: str) -> None:
        self.key = key
        self.reason = reason
        super().__init__(f"{key}: {reason}")


class ParseError(DrofaError, ValueError):
    def __init__(self, line: int, reason: str = "") -> None:
        self.line = line
        super().__init__(f"line {line}: {reason}" if reason else f"line {line}")


class EmptyPartition(DrofaError, ValueError):
    def __init__(self, label) -> None:
        self.label = label
        super().__init__(f"partition {label!r} is empty")


class DivergenceDetected(DrofaError, FloatingPointError):
    def __init__(self, stage: int, step: int) -> None:
        self.stage = stage
        self.step = step
        super().__init__(f"non-finite iterate at stage {stage}, local step {step}")


class NonFiniteIterate(DivergenceDetected):
    pass


class WrongObjectiveKind(DrofaError, ValueError):
    pass


class GridTooCoarse(DrofaError, ValueError):
    pass


class MisalignedConfigs(DrofaError, ValueError):
    pass
