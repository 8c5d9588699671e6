"""Local objectives, dual regularizers and federation construction.

Three per-sample losses are supported, each with an optional ``l2_term/2 * |w|^2``
added to every sample:

* ``quadratic``: ``curvature/2 * |w - x|^2``. A client's loss is minimized at
  the mean of its rows, which act as the client "center".
* ``logistic_regression``: binary cross-entropy on ``<w, x>`` for two classes,
  or a sum of one-vs-rest binary heads for more classes (parameters are the
  heads stacked row-major, shape ``(n_classes, d)`` flattened).
* ``sigmoid_nonconvex``: ``(sigmoid(<w, x>) - y)^2`` with binary labels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import MixtureWeights
from .errors import (
    BadConfig,
    BadIndex,
    BoundaryKL,
    EmptyPartition,
    NonFiniteGradient,
    NonFiniteLoss,
    ParseError,
)

OBJECTIVE_KINDS = ("logistic_regression", "quadratic", "sigmoid_nonconvex")
REGULARIZER_KINDS = ("none", "quadratic_to_uniform", "kl_to_uniform")
FULL = None


@dataclass(frozen=True, eq=False)
class ClientShard:
    features: np.ndarray
    labels: np.ndarray
    client_id: int

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if X.shape[0] < 1:
            raise BadConfig(f"client {self.client_id} has no samples")
        if y.size != X.shape[0]:
            raise BadConfig(f"client {self.client_id}: {X.shape[0]} rows but {y.size} labels")
        if not np.all(np.isfinite(X)):
            raise BadConfig(f"client {self.client_id} has non-finite feature rows")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str = "logistic_regression"
    l2_term: float = 0.0
    curvature: float = 1.0
    n_classes: int = 2

    def __post_init__(self) -> None:
        if self.kind not in OBJECTIVE_KINDS:
            raise BadConfig(f"unknown objective kind {self.kind!r}")
        if self.l2_term < 0:
            raise BadConfig("l2_term must be >= 0")
        if self.kind == "quadratic" and not self.curvature > 0:
            raise BadConfig("quadratic curvature must be > 0")
        if self.n_classes < 2:
            raise BadConfig("n_classes must be >= 2")
        if self.kind == "sigmoid_nonconvex" and self.n_classes != 2:
            raise BadConfig("sigmoid_nonconvex supports binary labels only")

    @property
    def heads(self) -> int:
        if self.kind == "logistic_regression" and self.n_classes > 2:
            return self.n_classes
        return 1

    @property
    def is_classification(self) -> bool:
        return self.kind != "quadratic"

    @property
    def strong_convexity(self) -> float:
        """Strong-convexity modulus of every f_i (0 when not guaranteed)."""
        if self.kind == "quadratic":
            return self.curvature + self.l2_term
        return self.l2_term

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "l2_term": self.l2_term,
            "curvature": self.curvature,
            "n_classes": self.n_classes,
        }


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str = "none"
    strength: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in REGULARIZER_KINDS:
            raise BadConfig(f"unknown regularizer kind {self.kind!r}")
        if self.kind != "none" and not self.strength > 0:
            raise BadConfig(f"{self.kind} needs strength > 0")

    @classmethod
    def quadratic(cls, strength: float) -> RegularizerSpec:
        return cls("quadratic_to_uniform", float(strength))

    @classmethod
    def kl(cls, strength: float) -> RegularizerSpec:
        return cls("kl_to_uniform", float(strength))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strength": self.strength}


NO_REGULARIZER = RegularizerSpec()


@dataclass(frozen=True, eq=False)
class Federation:
    """N client shards sharing one feature dimension and one objective.

    ``holdout`` optionally holds one evaluation shard per client, drawn from
    the same generating distribution as the training shard.
    """

    shards: tuple
    objective: ObjectiveSpec
    holdout: tuple | None = None

    def __post_init__(self) -> None:
        shards = tuple(self.shards)
        if not shards:
            raise BadConfig("a federation needs at least one client")
        d = shards[0].dim
        for s in shards:
            if s.dim != d:
                raise BadConfig(f"client {s.client_id} has dimension {s.dim}, expected {d}")
        object.__setattr__(self, "shards", shards)
        if self.holdout is not None:
            hold = tuple(self.holdout)
            if len(hold) != len(shards) or any(h.dim != d for h in hold):
                raise BadConfig("holdout shards must match the training shards")
            object.__setattr__(self, "holdout", hold)

    @property
    def n_clients(self) -> int:
        return len(self.shards)

    @property
    def feature_dim(self) -> int:
        return self.shards[0].dim

    @property
    def param_dim(self) -> int:
        return self.objective.heads * self.feature_dim

    def zeros(self) -> np.ndarray:
        return np.zeros(self.param_dim)

    def with_holdout_as_train(self) -> Federation:
        if self.holdout is None:
            return self
        return Federation(self.holdout, self.objective)


# ---------------------------------------------------------------------------
# per-sample losses


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _one_hot(y: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((y.size, k))
    out[np.arange(y.size), y.astype(np.int64)] = 1.0
    return out


def _sample_losses(obj: ObjectiveSpec, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    if obj.kind == "quadratic":
        diff = X - w
        losses = 0.5 * obj.curvature * np.einsum("ij,ij->i", diff, diff)
    elif obj.kind == "sigmoid_nonconvex":
        losses = (_sigmoid(X @ w) - y) ** 2
    elif obj.heads == 1:
        z = X @ w
        losses = np.logaddexp(0.0, z) - y * z
    else:
        Z = X @ w.reshape(obj.heads, -1).T
        Y = _one_hot(y, obj.heads)
        losses = np.sum(np.logaddexp(0.0, Z) - Y * Z, axis=1)
    if obj.l2_term:
        losses = losses + 0.5 * obj.l2_term * float(w @ w)
    return losses


def _batch_grad(obj: ObjectiveSpec, X: np.ndarray, y: np.ndarray, w: np.ndarray) -> np.ndarray:
    b = X.shape[0]
    if obj.kind == "quadratic":
        g = obj.curvature * (w - X.mean(axis=0))
    elif obj.kind == "sigmoid_nonconvex":
        s = _sigmoid(X @ w)
        g = X.T @ (2.0 * (s - y) * s * (1.0 - s)) / b
    elif obj.heads == 1:
        g = X.T @ (_sigmoid(X @ w) - y) / b
    else:
        Z = X @ w.reshape(obj.heads, -1).T
        R = _sigmoid(Z) - _one_hot(y, obj.heads)
        g = (R.T @ X).reshape(-1) / b
    if obj.l2_term:
        g = g + obj.l2_term * w
    return g


def _select(fed: Federation, i: int, batch):
    if not 0 <= i < fed.n_clients:
        raise BadIndex(f"client index {i} out of range for {fed.n_clients} clients")
    shard = fed.shards[i]
    if batch is FULL:
        return shard.features, shard.labels
    idx = np.asarray(batch, dtype=np.int64).reshape(-1)
    if idx.size == 0 or idx.min() < 0 or idx.max() >= shard.n:
        raise BadIndex(f"batch indices out of range for client {i} with {shard.n} samples")
    return shard.features[idx], shard.labels[idx]


def eval_loss(fed: Federation, i: int, w: np.ndarray, batch=FULL) -> float:
    """Mean per-sample loss of client ``i`` at ``w`` over ``batch`` (FULL = whole shard)."""
    X, y = _select(fed, i, batch)
    losses = _sample_losses(fed.objective, X, y, np.asarray(w, dtype=np.float64))
    value = math.fsum(losses) / losses.size
    if not math.isfinite(value):
        raise NonFiniteLoss(f"client {i}: loss is not finite")
    return value


def eval_grad(fed: Federation, i: int, w: np.ndarray, batch=FULL) -> np.ndarray:
    X, y = _select(fed, i, batch)
    g = _batch_grad(fed.objective, X, y, np.asarray(w, dtype=np.float64))
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient(f"client {i}: gradient is not finite")
    return g


def all_losses(fed: Federation, w: np.ndarray) -> np.ndarray:
    """Full-batch loss of every client, in client order."""
    return np.array([eval_loss(fed, i, w) for i in range(fed.n_clients)])


def losses_on_grid(fed: Federation, i: int, W: np.ndarray) -> np.ndarray:
    """Full-batch loss of client ``i`` at each row of ``W`` (vectorized over rows)."""
    obj = fed.objective
    X, y = fed.shards[i].features, fed.shards[i].labels
    W = np.atleast_2d(np.asarray(W, dtype=np.float64))
    if obj.kind == "quadratic":
        sq = np.einsum("ij,ij->i", X, X).mean()
        vals = 0.5 * obj.curvature * (np.einsum("gj,gj->g", W, W) - 2.0 * W @ X.mean(axis=0) + sq)
    elif obj.kind == "sigmoid_nonconvex":
        vals = ((_sigmoid(X @ W.T) - y[:, None]) ** 2).mean(axis=0)
    elif obj.heads == 1:
        Z = X @ W.T
        vals = (np.logaddexp(0.0, Z) - y[:, None] * Z).mean(axis=0)
    else:
        Wh = W.reshape(W.shape[0], obj.heads, -1)
        Z = np.einsum("nd,gkd->ngk", X, Wh)
        Y = _one_hot(y, obj.heads)[:, None, :]
        vals = np.sum(np.logaddexp(0.0, Z) - Y * Z, axis=2).mean(axis=0)
    if obj.l2_term:
        vals = vals + 0.5 * obj.l2_term * np.einsum("gj,gj->g", W, W)
    return vals


def smoothness_bound(fed: Federation) -> float:
    """An upper bound on the gradient-Lipschitz constant shared by all f_i."""
    obj = fed.objective
    if obj.kind == "quadratic":
        return obj.curvature + obj.l2_term
    # curvature of the scalar link: logistic s' <= 1/4; squared sigmoid
    # 2*(s'^2 + |s - y| |s''|) <= 2*(1/16 + 0.0963) < 0.32
    scale = 0.25 if obj.kind == "logistic_regression" else 0.32
    top = 0.0
    for s in fed.shards:
        top = max(top, np.linalg.eigvalsh(s.features.T @ s.features / s.n)[-1])
    return scale * top + obj.l2_term


# ---------------------------------------------------------------------------
# dual regularizers


def eval_regularizer(g: RegularizerSpec, lam: MixtureWeights) -> tuple[float, np.ndarray]:
    """Value and gradient of g at ``lam``. Both supported kinds vanish at uniform."""
    lam = np.asarray(lam, dtype=np.float64)
    n = lam.size
    if g.kind == "none":
        return 0.0, np.zeros(n)
    if g.kind == "quadratic_to_uniform":
        diff = lam - 1.0 / n
        return -0.5 * g.strength * float(diff @ diff), -g.strength * diff
    zero = np.flatnonzero(lam <= 0.0)
    if zero.size:
        raise BoundaryKL(int(zero[0]))
    log_ratio = np.log(n * lam)
    return -g.strength * math.fsum(lam * log_ratio), -g.strength * (log_ratio + 1.0)


# ---------------------------------------------------------------------------
# federation builders


def make_quadratic_federation(
    centers,
    curvature: float = 1.0,
    l2_term: float = 0.0,
    samples_per_client: int = 1,
    noise: float = 0.0,
    seed: int = 0,
) -> Federation:
    """Quadratic clients whose sample means equal ``centers`` exactly.

    With ``samples_per_client > 1`` the rows are Gaussian perturbations of the
    center, re-centered so that f_i is minimized at its center; minibatch
    gradients are then noisy but unbiased.
    """
    from .sampling import RngStream

    C = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    shards = []
    for i, c in enumerate(C):
        if samples_per_client == 1 or noise == 0.0:
            X = np.tile(c, (samples_per_client, 1))
        else:
            rng = RngStream(seed, "data_gen", 0, i).generator()
            E = rng.normal(scale=noise, size=(samples_per_client, C.shape[1]))
            X = c + (E - E.mean(axis=0))
        shards.append(ClientShard(X, np.zeros(samples_per_client), i))
    return Federation(shards, ObjectiveSpec("quadratic", l2_term=l2_term, curvature=curvature))


def _sphere_points(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    P = rng.normal(size=(n, d))
    norms = np.linalg.norm(P, axis=1, keepdims=True)
    return P / np.where(norms == 0, 1.0, norms)


def make_synthetic_federation(
    n_clients: int,
    dim: int,
    samples_per_client: int = 100,
    heterogeneity: str = "one_class_per_client",
    alpha: float = 0.0,
    seed: int = 0,
    *,
    n_classes: int | None = None,
    radius: float = 3.0,
    radii=None,
    radius_spread: float = 0.0,
    noise: float = 1.0,
    objective: str = "logistic_regression",
    l2_term: float = 0.0,
    intercept: bool = True,
    holdout_per_client: int = 0,
) -> Federation:
    """Gaussian-cluster federation reproducing the one-class-per-device split.

    Client ``i`` owns cluster ``i`` with mean on a sphere of radius ``radius``
    (or ``radii[i]`` when given) and label ``i mod n_classes``. A positive
    ``radius_spread`` shrinks each radius by an independent uniform factor in
    ``[1 - radius_spread, 1]``, so some classes crowd the origin. Under
    ``mixed`` heterogeneity each sample comes from the client's own cluster
    with probability ``1 - alpha`` and from a uniformly chosen cluster
    otherwise, carrying that cluster's label.
    """
    from .sampling import RngStream

    if n_clients < 1 or dim < 1 or samples_per_client < 1:
        raise BadConfig("n_clients, dim and samples_per_client must all be >= 1")
    if heterogeneity not in ("one_class_per_client", "mixed"):
        raise BadConfig(f"unknown heterogeneity {heterogeneity!r}")
    if heterogeneity == "mixed" and not 0.0 <= alpha <= 1.0:
        raise BadConfig("mixed heterogeneity needs 0 <= alpha <= 1")
    if n_classes is None:
        n_classes = max(n_clients, 2)
    if objective == "sigmoid_nonconvex":
        n_classes = 2
    if radii is None:
        radii = np.full(n_clients, float(radius))
    radii = np.asarray(radii, dtype=np.float64)
    if radii.shape != (n_clients,):
        raise BadConfig("radii needs one entry per client")
    if not 0.0 <= radius_spread <= 1.0:
        raise BadConfig("radius_spread must lie in [0, 1]")
    if radius_spread > 0.0:
        radii = radii * np.linspace(1.0, 1.0 - radius_spread, n_clients)

    layout = RngStream(seed, "data_gen", 0, 0).generator()
    means = _sphere_points(layout, n_clients, dim) * radii[:, None]
    cluster_labels = np.arange(n_clients) % n_classes

    def draw(i: int, count: int, split: int) -> ClientShard:
        rng = RngStream(seed, "data_gen", split, i + 1).generator()
        own = np.full(count, i)
        if heterogeneity == "mixed" and alpha > 0.0:
            swap = rng.random(count) < alpha
            own = np.where(swap, rng.integers(0, n_clients, size=count), own)
        X = means[own] + rng.normal(scale=noise, size=(count, dim))
        if intercept:
            X = np.hstack([X, np.ones((count, 1))])
        return ClientShard(X, cluster_labels[own].astype(np.float64), i)

    shards = [draw(i, samples_per_client, 1) for i in range(n_clients)]
    holdout = None
    if holdout_per_client > 0:
        holdout = [draw(i, holdout_per_client, 2) for i in range(n_clients)]
    spec = ObjectiveSpec(objective, l2_term=l2_term, n_classes=n_classes)
    return Federation(shards, spec, holdout)


def load_csv_federation(
    path,
    partition="by_label",
    *,
    label_column: int = -1,
    header: bool = False,
    objective: str = "logistic_regression",
    l2_term: float = 0.0,
    expected_keys=None,
) -> Federation:
    """Read a rectangular numeric CSV and split its rows into client shards.

    ``partition`` is ``"by_label"`` or ``("by_column", col)``; in the latter
    case column ``col`` is used as the client key and dropped from the
    features. Shards are ordered by ascending key. Labels are remapped to
    ``0..K-1`` in ascending order of their values. Line numbers in
    ``ParseError`` are 1-based physical lines of the file.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc}") from exc

    rows: list[list[float]] = []
    width = None
    for lineno, record in enumerate(csv.reader(text.splitlines()), start=1):
        if header and lineno == 1:
            continue
        if not record or all(not cell.strip() for cell in record):
            continue
        try:
            values = [float(cell) for cell in record]
        except ValueError:
            raise ParseError(lineno, "non-numeric cell") from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(lineno, f"expected {width} columns, got {len(values)}")
        rows.append(values)
    if not rows:
        raise ParseError(1, "no data rows")

    data = np.array(rows)
    lab = label_column % data.shape[1]
    labels = data[:, lab]
    keep = [j for j in range(data.shape[1]) if j != lab]

    if partition == "by_label":
        keys = labels
    elif isinstance(partition, (tuple, list)) and len(partition) == 2 and partition[0] == "by_column":
        col = int(partition[1]) % data.shape[1]
        if col == lab:
            raise BadConfig("partition column must differ from the label column")
        keys = data[:, col]
        keep = [j for j in keep if j != col]
    else:
        raise BadConfig(f"unknown partition rule {partition!r}")

    classes = np.unique(labels)
    label_index = np.searchsorted(classes, labels).astype(np.float64)
    unique_keys = np.unique(keys)
    if expected_keys is not None:
        for k in expected_keys:
            if not np.any(unique_keys == k):
                raise EmptyPartition(k)
        unique_keys = np.array(sorted(expected_keys), dtype=np.float64)

    shards = []
    for cid, key in enumerate(unique_keys):
        mask = keys == key
        if not mask.any():
            raise EmptyPartition(key)
        shards.append(ClientShard(data[mask][:, keep], label_index[mask], cid))
    n_classes = max(len(classes), 2)
    return Federation(shards, ObjectiveSpec(objective, l2_term=l2_term, n_classes=n_classes))
