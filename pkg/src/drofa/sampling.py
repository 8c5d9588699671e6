"""Randomized choices of the simulator, all drawn from keyed counter-based streams.

Every stream is a Philox generator whose key is the run seed and whose
starting counter encodes ``(purpose, round, client_id, slot)``. Draws within
a stream advance only the lowest counter word, so two streams never overlap
and the value of any draw is a pure function of its key, independent of the
order in which clients are simulated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import MixtureWeights

PURPOSES = {
    "device_select": 1,
    "uniform_select": 2,
    "snapshot": 3,
    "minibatch": 4,
    "probe_minibatch": 5,
    "data_gen": 6,
    "experiment": 7,
}

_U64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    purpose: str
    round: int = 0
    client_id: int = 0
    slot: int = 0

    def __post_init__(self) -> None:
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown stream purpose {self.purpose!r}")
        if min(self.round, self.client_id, self.slot) < 0:
            raise ValueError("stream coordinates must be nonnegative")

    def generator(self) -> np.random.Generator:
        counter = [
            0,
            self.client_id & _U64,
            self.round & _U64,
            ((PURPOSES[self.purpose] << 32) | (self.slot & 0xFFFFFFFF)) & _U64,
        ]
        key = self.seed & ((1 << 128) - 1)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    return rng


def sample_categorical(weights: np.ndarray, size: int, rng) -> np.ndarray:
    """``size`` i.i.d. draws of indices distributed as ``weights`` (inverse CDF)."""
    gen = _as_generator(rng)
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    u = gen.random(size)
    idx = np.searchsorted(cdf, u, side="right")
    return np.minimum(idx, weights.size - 1)


def sample_clients_weighted(lam: MixtureWeights, m: int, rng) -> np.ndarray:
    """m client ids drawn with replacement according to ``lam``, in draw order."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return sample_categorical(np.asarray(lam, dtype=np.float64), m, rng)


def sample_clients_uniform(n: int, m: int, rng) -> np.ndarray:
    if m < 1 or n < 1:
        raise ValueError("n and m must be >= 1")
    return _as_generator(rng).integers(0, n, size=m)


def sample_snapshot_step(tau: int, rng) -> int:
    """Local-step offset k' uniform on 1..tau."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    return int(_as_generator(rng).integers(1, tau + 1))


def draw_minibatch(shard, b: int, rng) -> np.ndarray:
    """b indices into ``shard`` drawn uniformly with replacement."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    return _as_generator(rng).integers(0, shard.n, size=b)


def slot_numbers(ids) -> list[int]:
    """Occurrence index of each id among the earlier entries of ``ids``.

    Used to key independent streams for repeated draws of the same client.
    """
    seen: dict[int, int] = {}
    out = []
    for i in ids:
        i = int(i)
        out.append(seen.get(i, 0))
        seen[i] = out[-1] + 1
    return out
