"""Projections onto the primal domain and the simplex, and the simplex prox."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import wrightomega

from .domain import MixtureWeights, ModelParams, PrimalDomainSpec, renormalize_exact
from .errors import BadConfig, EmptyVector, NonFiniteInput, SolverNoConvergence
from .objectives import RegularizerSpec, eval_regularizer

KL_FLOOR = 1e-300
PROX_MAX_ITER = 200
PROX_KKT_TOL = 1e-10


def project_simplex(v) -> MixtureWeights:
    """Euclidean projection onto the probability simplex (sort and threshold).

    Ties are ordered by original index; the threshold, and so the result,
    does not depend on that order.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise EmptyVector()
    if not np.all(np.isfinite(v)):
        raise NonFiniteInput("simplex projection input")
    n = v.size
    if n == 1:
        return np.ones(1)
    v = v - v.max()  # shift-invariant; keeps huge entries from swamping the "- 1"
    u = v[np.argsort(-v, kind="stable")]
    css = np.cumsum(u)
    k = np.arange(1, n + 1)
    rho = int(np.flatnonzero(u * k > css - 1.0)[-1])
    theta = (css[rho] - 1.0) / (rho + 1)
    return renormalize_exact(np.maximum(v - theta, 0.0))


def project_primal(w, spec: PrimalDomainSpec) -> ModelParams:
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise NonFiniteInput("primal iterate")
    if spec.kind == "unconstrained":
        return w.copy()
    norm = float(np.linalg.norm(w))
    if norm <= spec.radius:
        return w.copy()
    return w * (spec.radius / norm)


@dataclass(frozen=True)
class ProxProblem:
    """argmax over the simplex of ``scale * g(u) - |anchor - u|^2 / (2 step)``."""

    anchor: np.ndarray
    step: float
    scale: float = 1.0
    regularizer: RegularizerSpec = RegularizerSpec()

    def __post_init__(self) -> None:
        a = np.asarray(self.anchor, dtype=np.float64).reshape(-1)
        if a.size == 0:
            raise EmptyVector()
        if not np.all(np.isfinite(a)):
            raise NonFiniteInput("prox anchor")
        if not (self.step > 0 and self.scale > 0):
            raise BadConfig("prox step and scale must be positive")
        object.__setattr__(self, "anchor", a)

    def gradient(self, u: np.ndarray) -> np.ndarray:
        _, dg = eval_regularizer(self.regularizer, u)
        return self.scale * dg + (self.anchor - u) / self.step

    def objective(self, u: np.ndarray) -> float:
        val, _ = eval_regularizer(self.regularizer, u)
        diff = self.anchor - u
        return self.scale * val - float(diff @ diff) / (2.0 * self.step)


def kkt_residual(lam: np.ndarray, p: ProxProblem) -> float:
    """|lam - P(lam + grad)|, zero exactly at the prox maximizer."""
    return float(np.linalg.norm(lam - project_simplex(lam + p.gradient(lam))))


def _kl_prox(p: ProxProblem) -> np.ndarray:
    # Stationarity decouples per coordinate given the multiplier theta:
    #   u_i + c log(N u_i) = a_i - theta,   c = step * scale * rho
    # whose root is u_i = c * omega((a_i - theta)/c - log(N c)).
    a = p.anchor
    n = a.size
    c = p.step * p.scale * p.regularizer.strength
    shift = math.log(n * c)

    def coords(theta: float) -> np.ndarray:
        z = (a - theta) / c - shift
        return np.maximum(c * np.real(wrightomega(z)), KL_FLOOR)

    lo, hi = float(a.min()) - 1.0 / n, float(a.max()) - 1.0 / n
    theta = 0.5 * (lo + hi)
    for it in range(PROX_MAX_ITER):
        u = coords(theta)
        excess = math.fsum(u) - 1.0
        if excess > 0:
            lo = theta
        else:
            hi = theta
        if abs(excess) <= 1e-15 or hi - lo <= 1e-16 * max(1.0, abs(theta)):
            break
        slope = -float(np.sum(u / (u + c)))
        step = theta - excess / slope
        theta = step if lo < step < hi else 0.5 * (lo + hi)
    else:
        u = coords(theta)
    lam = renormalize_exact(u / math.fsum(u))
    res = kkt_residual(lam, p)
    if not res < PROX_KKT_TOL:
        raise SolverNoConvergence(res, it + 1)
    return lam


def prox_simplex(p: ProxProblem) -> MixtureWeights:
    g = p.regularizer
    if g.kind == "none":
        return project_simplex(p.anchor)
    if g.kind == "quadratic_to_uniform":
        n = p.anchor.size
        c = p.scale * g.strength
        return project_simplex((p.anchor / p.step + c / n) / (1.0 / p.step + c))
    return _kl_prox(p)
