"""Brute-force references used to check the fast paths.

Nothing here calls the sort-based projection or the prox solvers in
``geometry``; regularizer values are re-derived locally as well. These
routines are exponential or grid-based and meant for tiny instances only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .domain import PrimalDomainSpec
from .errors import BadConfig, NoConvergence
from .objectives import Federation, RegularizerSpec


@lru_cache(maxsize=None)
def _support_masks(n: int) -> np.ndarray:
    codes = np.arange(1, 2**n)
    return ((codes[:, None] >> np.arange(n)) & 1).astype(bool)


def brute_force_simplex_projection(v) -> np.ndarray:
    """Projection onto the simplex by enumerating every support set.

    For a support S the equality-constrained least-squares solution is
    ``x_S = v_S - (sum(v_S) - 1)/|S|``; the answer is the closest feasible one.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    n = v.size
    if n > 16:
        raise BadConfig("brute-force projection is limited to 16 coordinates")
    masks = _support_masks(n)
    sizes = masks.sum(axis=1)
    shift = (masks @ v - 1.0) / sizes
    X = np.where(masks, v[None, :] - shift[:, None], 0.0)
    feasible = np.all(X >= 0.0, axis=1)
    dist = np.sum((X - v) ** 2, axis=1)
    dist[~feasible] = np.inf
    return X[int(np.argmin(dist))].copy()


def _reg_value(g: RegularizerSpec, lam: np.ndarray) -> float:
    n = lam.size
    if g.kind == "none":
        return 0.0
    if g.kind == "quadratic_to_uniform":
        return -0.5 * g.strength * float(np.sum((lam - 1.0 / n) ** 2))
    pos = lam > 0
    return -g.strength * float(np.sum(lam[pos] * np.log(n * lam[pos])))


def _reg_values_rows(g: RegularizerSpec, L: np.ndarray) -> np.ndarray:
    n = L.shape[1]
    if g.kind == "none":
        return np.zeros(L.shape[0])
    if g.kind == "quadratic_to_uniform":
        return -0.5 * g.strength * np.sum((L - 1.0 / n) ** 2, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(L > 0, L * np.log(n * L), 0.0)
    return -g.strength * terms.sum(axis=1)


# ---------------------------------------------------------------------------
# saddle points of quadratic federations


@dataclass(frozen=True)
class SaddleProblem:
    """``f_i(w) = curvature/2 |w - c_i|^2 + l2_term/2 |w|^2 + offset_i``.

    The offsets carry the within-client sample variance when the problem is
    built from a federation with several rows per client.
    """

    centers: np.ndarray
    curvature: float = 1.0
    l2_term: float = 0.0
    offsets: np.ndarray | None = None
    regularizer: RegularizerSpec = RegularizerSpec()
    domain: PrimalDomainSpec = PrimalDomainSpec()

    def __post_init__(self) -> None:
        C = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        n, d = C.shape
        if n > 8 or d > 4:
            raise BadConfig("saddle oracle is limited to N <= 8 clients and d <= 4")
        if not self.curvature > 0:
            raise BadConfig("curvature must be positive")
        off = np.zeros(n) if self.offsets is None else np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "centers", C)
        object.__setattr__(self, "offsets", off)

    @classmethod
    def from_federation(cls, fed: Federation, regularizer=RegularizerSpec(), domain=PrimalDomainSpec()):
        obj = fed.objective
        if obj.kind != "quadratic":
            raise BadConfig("saddle oracle needs a quadratic federation")
        C = np.vstack([s.features.mean(axis=0) for s in fed.shards])
        off = np.array([0.5 * obj.curvature * np.mean(np.sum((s.features - c) ** 2, axis=1))
                        for s, c in zip(fed.shards, C)])
        return cls(C, obj.curvature, obj.l2_term, off, regularizer, domain)

    @property
    def n(self) -> int:
        return self.centers.shape[0]

    def losses(self, w: np.ndarray) -> np.ndarray:
        diff = self.centers - w
        return 0.5 * self.curvature * np.sum(diff**2, axis=1) + 0.5 * self.l2_term * float(w @ w) + self.offsets

    def objective(self, w, lam) -> float:
        return float(np.asarray(lam) @ self.losses(np.asarray(w))) + _reg_value(self.regularizer, np.asarray(lam))

    def best_w(self, lam: np.ndarray) -> np.ndarray:
        z = self.curvature * (lam @ self.centers) / (self.curvature + self.l2_term)
        if self.domain.kind == "l2_ball":
            norm = float(np.linalg.norm(z))
            if norm > self.domain.radius:
                z = z * (self.domain.radius / norm)
        return z

    def best_lambda(self, w: np.ndarray) -> np.ndarray:
        f = self.losses(w)
        g = self.regularizer
        if g.kind == "none":
            lam = np.zeros(self.n)
            lam[int(np.argmax(f))] = 1.0
            return lam
        if g.kind == "quadratic_to_uniform":
            return brute_force_simplex_projection(1.0 / self.n + f / g.strength)
        z = f / g.strength
        p = np.exp(z - z.max())
        return p / p.sum()

    def phi(self, w) -> float:
        w = np.asarray(w, dtype=np.float64)
        return self.objective(w, self.best_lambda(w))

    def dual(self, lam) -> float:
        lam = np.asarray(lam, dtype=np.float64)
        return self.objective(self.best_w(lam), lam)

    def dual_gradient(self, lam: np.ndarray) -> np.ndarray:
        g = self.regularizer
        grad = self.losses(self.best_w(lam))
        if g.kind == "quadratic_to_uniform":
            grad = grad - g.strength * (lam - 1.0 / self.n)
        elif g.kind == "kl_to_uniform":
            grad = grad - g.strength * (np.log(self.n * np.maximum(lam, 1e-300)) + 1.0)
        return grad


@dataclass
class SaddleSolution:
    w_star: np.ndarray
    lambda_star: np.ndarray
    phi_star: float
    residuals: tuple[float, float]


def _enumerate_dual(p: SaddleProblem) -> np.ndarray:
    # The dual function is the concave quadratic b.lam - lam'H lam/2 (+ const)
    # on the simplex; its maximizer is the best KKT point over all faces.
    mu, l2 = p.curvature, p.l2_term
    C = p.centers
    b = 0.5 * mu * np.sum(C**2, axis=1) + p.offsets
    H = (mu * mu / (mu + l2)) * (C @ C.T)
    if p.regularizer.kind == "quadratic_to_uniform":
        H = H + p.regularizer.strength * np.eye(p.n)
    best, best_val = None, -math.inf
    for mask in _support_masks(p.n):
        idx = np.flatnonzero(mask)
        k = idx.size
        K = np.zeros((k + 1, k + 1))
        K[:k, :k] = H[np.ix_(idx, idx)]
        K[:k, k] = 1.0
        K[k, :k] = 1.0
        rhs = np.append(b[idx], 1.0)
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        if not np.allclose(K @ sol, rhs, atol=1e-10):
            continue
        if np.any(sol[:k] < -1e-13):
            continue
        lam = np.zeros(p.n)
        lam[idx] = np.maximum(sol[:k], 0.0)
        lam /= lam.sum()
        val = p.dual(lam)
        if val > best_val + 1e-15:
            best, best_val = lam, val
    return best


def _ascend_dual(p: SaddleProblem, max_iter: int, tol: float) -> np.ndarray:
    g = p.regularizer
    lip = (p.curvature**2 / (p.curvature + p.l2_term)) * np.linalg.norm(p.centers, 2) ** 2
    lam = np.full(p.n, 1.0 / p.n)
    if g.kind == "kl_to_uniform":
        beta = 1.0 / (lip + g.strength)
        for _ in range(max_iter):
            target = np.log(lam) * (1.0 - beta * g.strength) + beta * p.losses(p.best_w(lam))
            new = np.exp(target - target.max())
            new /= new.sum()
            if np.linalg.norm(new - lam) < tol:
                return new
            lam = new
        return lam
    step = 1.0 / (lip + (g.strength if g.kind != "none" else 0.0))
    for _ in range(max_iter):
        new = brute_force_simplex_projection(lam + step * p.dual_gradient(lam))
        if np.linalg.norm(new - lam) < tol:
            return new
        lam = new
    return lam


def saddle_point_oracle(p: SaddleProblem, tol: float = 1e-12, max_iter: int = 100_000) -> SaddleSolution:
    """Certified saddle point of a small quadratic minimax problem.

    The dual function ``lam -> min_w F(w, lam)`` is maximized with the exact
    primal best response plugged in: by exhaustive face enumeration when it is
    a quadratic (unconstrained domain, no or quadratic regularizer), otherwise
    by projected (or entropic, for KL) ascent. The certificate is the duality
    gap ``Phi(w*) - dual(lam*)`` and the dual projected-gradient norm.
    """
    if p.domain.kind == "unconstrained" and p.regularizer.kind != "kl_to_uniform":
        lam = _enumerate_dual(p)
    else:
        lam = _ascend_dual(p, max_iter, tol * 1e-2)
    w = p.best_w(lam)
    phi = p.phi(w)
    gap = phi - p.dual(lam)
    if p.regularizer.kind == "kl_to_uniform":
        stationarity = float(np.linalg.norm(lam - p.best_lambda(w)))
    else:
        step = 1.0 / max(1.0, float(np.max(np.abs(p.dual_gradient(lam)))))
        stationarity = float(np.linalg.norm(lam - brute_force_simplex_projection(lam + step * p.dual_gradient(lam))))
    residuals = (abs(gap), stationarity)
    if max(residuals) > tol * max(1.0, abs(phi)):
        raise NoConvergence(residuals, max_iter)
    return SaddleSolution(w, lam, phi, residuals)


# ---------------------------------------------------------------------------
# dense search over small simplices


def _grid_simplex(n: int, h: float, center=None, radius=None) -> np.ndarray:
    if n == 1:
        return np.ones((1, 1))
    if n == 2:
        lo, hi = (0.0, 1.0) if center is None else (max(0.0, center[0] - radius), min(1.0, center[0] + radius))
        a = np.arange(lo, hi + 0.5 * h, h)
        a = np.clip(a, 0.0, 1.0)
        return np.column_stack([a, 1.0 - a])
    if center is None:
        a = np.arange(0.0, 1.0 + 0.5 * h, h)
        A, B = np.meshgrid(a, a, indexing="ij")
    else:
        a = np.arange(center[0] - radius, center[0] + radius + 0.5 * h, h)
        b = np.arange(center[1] - radius, center[1] + radius + 0.5 * h, h)
        A, B = np.meshgrid(a, b, indexing="ij")
    A, B = A.reshape(-1), B.reshape(-1)
    keep = (A >= -1e-15) & (B >= -1e-15) & (A + B <= 1.0 + 1e-15)
    A, B = np.clip(A[keep], 0, 1), np.clip(B[keep], 0, 1)
    return np.column_stack([A, B, np.clip(1.0 - A - B, 0.0, 1.0)])


def grid_argmax_simplex(fun, n: int, resolution: float) -> tuple[float, np.ndarray]:
    """Maximize a vectorized ``fun(rows) -> values`` over the N-simplex, N <= 3.

    N <= 2 is a single dense sweep at ``resolution``. For N = 3 the sweep
    starts at spacing 1e-2 and zooms in by a factor 10 around the incumbent
    until the spacing reaches ``resolution``; this is exact up to the final
    spacing for concave objectives.
    """
    if n > 3:
        raise BadConfig("grid search over the simplex supports N <= 3")
    if n <= 2:
        P = _grid_simplex(n, resolution)
        vals = fun(P)
        k = int(np.argmax(vals))
        return float(vals[k]), P[k]
    h = max(resolution, 1e-2)
    P = _grid_simplex(3, h)
    vals = fun(P)
    k = int(np.argmax(vals))
    best, best_val = P[k], float(vals[k])
    while h > resolution * (1 + 1e-9):
        radius = 2.0 * h
        h = max(resolution, h / 10.0)
        P = _grid_simplex(3, h, best, radius)
        vals = fun(P)
        k = int(np.argmax(vals))
        if vals[k] >= best_val:
            best, best_val = P[k], float(vals[k])
    return best_val, best


def grid_max_over_simplex(loss_values, g: RegularizerSpec, resolution: float = 1e-5) -> tuple[float, np.ndarray]:
    """max over lam of ``<lam, losses> + g(lam)`` by dense simplex search."""
    f = np.asarray(loss_values, dtype=np.float64)
    return grid_argmax_simplex(lambda P: P @ f + _reg_values_rows(g, P), f.size, resolution)


def grid_prox(anchor, step: float, scale: float, g: RegularizerSpec, resolution: float = 1e-5):
    """Dense-search counterpart of the simplex prox:
    argmax ``scale*g(u) - |anchor - u|^2/(2 step)``."""
    a = np.asarray(anchor, dtype=np.float64)
    return grid_argmax_simplex(
        lambda P: scale * _reg_values_rows(g, P) - np.sum((P - a) ** 2, axis=1) / (2.0 * step),
        a.size,
        resolution,
    )
