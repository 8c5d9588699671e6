"""Evaluation quantities: worst-case objective, gradient dissimilarity,
primal-dual gap, per-client accuracy and a grid-based Moreau diagnostic."""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import xlogy

from .domain import MixtureWeights, PrimalDomainSpec, validate_mixture
from .errors import GridTooCoarse, SolverNoConvergence, WrongObjectiveKind
from .geometry import ProxProblem, project_primal, project_simplex, prox_simplex
from .objectives import (
    NO_REGULARIZER,
    Federation,
    RegularizerSpec,
    all_losses,
    eval_grad,
    eval_loss,
    eval_regularizer,
    losses_on_grid,
    smoothness_bound,
)

PHI_KKT_TOL = 1e-10


@dataclass
class MetricRecord:
    stage: int
    iteration: int
    comm_rounds: int
    avg_loss: float
    worst_loss: float
    worst_client: int
    worst_accuracy: float
    avg_accuracy: float
    fairness_std: float
    gamma_estimate: float

    def as_dict(self) -> dict:
        return asdict(self)


def phi_linear(fed: Federation, w) -> tuple[float, int]:
    """Worst single-client full-batch loss and its (smallest) client id."""
    losses = all_losses(fed, w)
    j = int(np.argmax(losses))
    return float(losses[j]), j


def _dual_kkt(lam: np.ndarray, losses: np.ndarray, g: RegularizerSpec) -> float:
    _, dg = eval_regularizer(g, lam)
    return float(np.linalg.norm(lam - project_simplex(lam + losses + dg)))


def maximize_over_simplex(losses, g: RegularizerSpec, lam0=None, max_iter: int = 500) -> tuple[float, MixtureWeights]:
    """max over the simplex of ``<lam, losses> + g(lam)``.

    Runs the proximal fixed-point iteration ``lam <- prox(lam + step * losses)``
    until the KKT residual drops below ``PHI_KKT_TOL``.
    """
    losses = np.asarray(losses, dtype=np.float64)
    n = losses.size
    if g.kind == "none":
        j = int(np.argmax(losses))
        lam = np.zeros(n)
        lam[j] = 1.0
        return float(losses[j]), lam
    step = 100.0 / g.strength
    lam = np.full(n, 1.0 / n) if lam0 is None else np.asarray(lam0, dtype=np.float64)
    res = math.inf
    for _ in range(max_iter):
        lam = prox_simplex(ProxProblem(lam + step * losses, step, 1.0, g))
        res = _dual_kkt(lam, losses, g)
        if res < PHI_KKT_TOL:
            break
    else:
        raise SolverNoConvergence(res, max_iter)
    value, _ = eval_regularizer(g, lam)
    return math.fsum(lam * losses) + value, lam


def phi_regularized(fed: Federation, w, g: RegularizerSpec = NO_REGULARIZER) -> tuple[float, MixtureWeights]:
    return maximize_over_simplex(all_losses(fed, w), g)


def gradient_dissimilarity_at(fed: Federation, w) -> float:
    """max_{i,j} |grad f_i(w) - grad f_j(w)|^2 with full-batch gradients."""
    if fed.n_clients == 1:
        return 0.0
    G = np.vstack([eval_grad(fed, i, w) for i in range(fed.n_clients)])
    best = 0.0
    for i, j in itertools.combinations(range(fed.n_clients), 2):
        diff = G[i] - G[j]
        best = max(best, float(diff @ diff))
    return best


def regularizer_value(g: RegularizerSpec, lam) -> float:
    """g(lam) with the 0 log 0 = 0 convention on the simplex boundary."""
    lam = np.asarray(lam, dtype=np.float64)
    if g.kind == "kl_to_uniform":
        return -g.strength * math.fsum(xlogy(lam, lam.size * lam))
    return eval_regularizer(g, lam)[0]


def weighted_objective(fed: Federation, w, lam, g: RegularizerSpec = NO_REGULARIZER) -> float:
    """F(w, lam) = sum_i lam_i f_i(w) + g(lam)."""
    return math.fsum(np.asarray(lam) * all_losses(fed, w)) + regularizer_value(g, lam)


def minimize_weighted(
    fed: Federation,
    lam,
    domain: PrimalDomainSpec = PrimalDomainSpec(),
    budget: int = 10_000,
    L: float | None = None,
    w_init=None,
    tol: float = 1e-8,
) -> tuple[float, np.ndarray]:
    """Projected gradient descent on ``sum_i lam_i f_i`` with step 1/L.

    Returns the smallest objective value seen (an upper bound on the minimum)
    and the point attaining it. For strongly convex objectives, failing to
    reach a projected-gradient norm below ``tol`` raises.
    """
    lam = np.asarray(lam, dtype=np.float64)
    L = smoothness_bound(fed) if L is None else L
    active = [i for i in range(fed.n_clients) if lam[i] > 0.0]
    w = fed.zeros() if w_init is None else project_primal(np.array(w_init, dtype=np.float64), domain)

    def value(x):
        return math.fsum(lam[i] * eval_loss(fed, i, x) for i in active)

    best_val, best_w = value(w), w.copy()
    pg_norm = math.inf
    for _ in range(budget):
        grad = sum(lam[i] * eval_grad(fed, i, w) for i in active)
        w_new = project_primal(w - grad / L, domain)
        pg_norm = L * float(np.linalg.norm(w - w_new))
        w = w_new
        val = value(w)
        if val < best_val:
            best_val, best_w = val, w.copy()
        if pg_norm < 1e-12:
            break
    if fed.objective.strong_convexity > 0 and pg_norm > tol:
        raise SolverNoConvergence(pg_norm, budget)
    return best_val, best_w


def primal_dual_gap(
    fed: Federation,
    w_hat,
    lambda_hat,
    g: RegularizerSpec = NO_REGULARIZER,
    inner_budget: int = 10_000,
    domain: PrimalDomainSpec = PrimalDomainSpec(),
) -> float:
    """max_lam F(w_hat, lam) - min_w F(w, lambda_hat), an upper bound on the true gap.

    The min term comes from ``minimize_weighted`` warm-started at ``w_hat``.
    Only meaningful for convex objectives.
    """
    if fed.objective.kind == "sigmoid_nonconvex":
        raise WrongObjectiveKind("primal-dual gap needs a convex objective")
    lam = validate_mixture(lambda_hat)
    upper, _ = phi_regularized(fed, w_hat, g)
    lower, _ = minimize_weighted(fed, lam, domain, inner_budget, w_init=w_hat)
    return upper - (lower + regularizer_value(g, lam))


def predict(fed: Federation, X: np.ndarray, w) -> np.ndarray:
    obj = fed.objective
    w = np.asarray(w, dtype=np.float64)
    if obj.heads == 1:
        return (X @ w > 0.0).astype(np.float64)
    scores = X @ w.reshape(obj.heads, -1).T
    return np.argmax(scores, axis=1).astype(np.float64)


def classification_metrics(fed: Federation, w, use_holdout: bool = True) -> dict:
    """Per-client accuracy, its minimum, mean and population standard deviation.

    Uses the holdout shards when the federation has them and ``use_holdout``.
    """
    if not fed.objective.is_classification:
        raise WrongObjectiveKind(f"{fed.objective.kind} has no notion of accuracy")
    shards = fed.holdout if (use_holdout and fed.holdout is not None) else fed.shards
    acc = np.array([float(np.mean(predict(fed, s.features, w) == s.labels)) for s in shards])
    worst = int(np.argmin(acc))
    return {
        "per_client_accuracy": acc,
        "worst_accuracy": float(acc[worst]),
        "worst_accuracy_client": worst,
        "avg_accuracy": float(np.mean(acc)),
        "fairness_std": float(np.std(acc)),
    }


def evaluate_record(fed: Federation, w, stage: int, iteration: int, comm_rounds: int) -> MetricRecord:
    losses = all_losses(fed, w)
    worst = int(np.argmax(losses))
    if fed.objective.is_classification:
        cm = classification_metrics(fed, w)
        worst_acc, avg_acc, std = cm["worst_accuracy"], cm["avg_accuracy"], cm["fairness_std"]
    else:
        worst_acc = avg_acc = std = math.nan
    return MetricRecord(
        stage=stage,
        iteration=iteration,
        comm_rounds=comm_rounds,
        avg_loss=math.fsum(losses) / losses.size,
        worst_loss=float(losses[worst]),
        worst_client=worst,
        worst_accuracy=worst_acc,
        avg_accuracy=avg_acc,
        fairness_std=std,
        gamma_estimate=gradient_dissimilarity_at(fed, w),
    )


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box ``[lower, upper]`` sampled with spacing ``step``."""

    lower: tuple
    upper: tuple
    step: float

    def axes(self) -> list[np.ndarray]:
        return [np.arange(lo, hi + 0.5 * self.step, self.step) for lo, hi in zip(self.lower, self.upper)]


def moreau_grad_norm_grid(
    fed: Federation, w, L: float, grid: GridSpec, g: RegularizerSpec = NO_REGULARIZER
) -> float:
    """Grid estimate of the gradient norm of the 1/(2L)-Moreau envelope of Phi at ``w``.

    Minimizes ``Phi(u) + L |u - w|^2`` over the grid and returns
    ``2 L |w - u*|``. Accuracy is limited to roughly ``2 L * step``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.size > 2:
        raise ValueError("grid Moreau diagnostic supports at most 2 parameters")
    axes = grid.axes()
    mesh = np.meshgrid(*axes, indexing="ij")
    U = np.column_stack([m.reshape(-1) for m in mesh])
    per_client = np.vstack([losses_on_grid(fed, i, U) for i in range(fed.n_clients)])
    if g.kind == "none":
        phi = per_client.max(axis=0)
    else:
        phi = np.array([maximize_over_simplex(col, g)[0] for col in per_client.T])
    obj = phi + L * np.sum((U - w) ** 2, axis=1)
    k = int(np.argmin(obj))
    u = U[k]
    multi = np.unravel_index(k, mesh[0].shape)
    for ax, pos in zip(axes, multi):
        if pos == 0 or pos == ax.size - 1:
            raise GridTooCoarse(f"envelope minimizer {u} lies on the grid boundary")
    return 2.0 * L * float(np.linalg.norm(w - u))
