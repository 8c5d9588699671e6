"""Core value types: model parameters, mixture weights, primal domains and
running-average accumulators.

Model parameters and mixture weights are plain float64 numpy arrays; the
helpers here are the single place where their invariants are checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadConfig,
    DimensionMismatch,
    EmptyVector,
    NegativeEntry,
    NonFiniteInput,
    SumOutOfTolerance,
)

SIMPLEX_TOL = 1e-12

ModelParams = np.ndarray
MixtureWeights = np.ndarray


def as_model_params(values, dim: int | None = None) -> ModelParams:
    w = np.array(values, dtype=np.float64).reshape(-1)
    if dim is not None and w.size != dim:
        raise DimensionMismatch(dim, w.size)
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("model parameters")
    return w


def validate_mixture(raw) -> MixtureWeights:
    """Check that ``raw`` lies on the probability simplex and return it as float64.

    Entries must be nonnegative exactly; the sum must be within ``SIMPLEX_TOL``
    of one.
    """
    lam = np.array(raw, dtype=np.float64).reshape(-1)
    if lam.size == 0:
        raise EmptyVector()
    if not np.all(np.isfinite(lam)):
        raise NonFiniteInput("mixture weights")
    neg = np.flatnonzero(lam < 0.0)
    if neg.size:
        raise NegativeEntry(int(neg[0]), float(lam[neg[0]]))
    total = math.fsum(lam)
    if abs(total - 1.0) > SIMPLEX_TOL:
        raise SumOutOfTolerance(total)
    return lam


def uniform_mixture(n: int) -> MixtureWeights:
    return np.full(n, 1.0 / n)


def renormalize_exact(lam: np.ndarray) -> np.ndarray:
    """Push the floating-point residual of ``sum(lam) - 1`` into the largest entry."""
    j = int(np.argmax(lam))
    for _ in range(3):
        residual = 1.0 - math.fsum(lam)
        if residual == 0.0:
            break
        lam[j] = max(lam[j] + residual, 0.0)
    return lam


@dataclass(frozen=True)
class PrimalDomainSpec:
    """The feasible set for the model: all of R^d or a centered Euclidean ball."""

    kind: str = "unconstrained"
    radius: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "unconstrained":
            return
        if self.kind != "l2_ball":
            raise BadConfig(f"unknown primal domain kind {self.kind!r}")
        if self.radius is None or not math.isfinite(self.radius) or self.radius <= 0:
            raise BadConfig(f"l2_ball radius must be finite and positive, got {self.radius!r}")

    @classmethod
    def l2_ball(cls, radius: float) -> PrimalDomainSpec:
        return cls("l2_ball", float(radius))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "radius": self.radius}


@dataclass
class IterateAverager:
    """Running mean of pushed vectors.

    The mean is computed with an exactly rounded per-coordinate sum, so it does
    not depend on the order in which vectors were pushed. ``weight`` lets a
    caller push a pre-summed block of iterates (e.g. the sum of ``tau`` local
    steps) and still count each underlying iterate once.
    """

    _rows: list = field(default_factory=list)
    count: int = 0

    @property
    def dim(self) -> int | None:
        return self._rows[0].size if self._rows else None

    @property
    def running_sum(self) -> np.ndarray:
        if not self._rows:
            return np.zeros(0)
        stacked = np.vstack(self._rows)
        return np.array([math.fsum(col) for col in stacked.T])

    def push(self, x, weight: int = 1) -> IterateAverager:
        x = np.array(x, dtype=np.float64).reshape(-1)
        if self._rows and x.size != self.dim:
            raise DimensionMismatch(self.dim, x.size)
        if weight < 1:
            raise ValueError("weight must be a positive integer")
        self._rows.append(x)
        self.count += int(weight)
        return self

    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise ValueError("mean of an empty averager")
        return self.running_sum / self.count


def averager_push(acc: IterateAverager, x) -> IterateAverager:
    return acc.push(x)
