"""Federated minimax loops: DRFA, DRFA-Prox, DRFA-GA and the FedAvg baseline.

All four share the same primal phase. At stage ``s`` the server draws ``m``
clients (by the current mixture weights, or uniformly for FedAvg), each runs
``tau`` projected SGD steps from the current global model, and the server
averages the end points. They differ only in how the mixture weights are
updated afterwards:

* ``drfa``: loss probes at a randomly chosen snapshot of the averaged local
  trajectory, scaled so that ``tau * v`` estimates the dual gradient summed
  over the stage, followed by a projected ascent step.
* ``drfa_prox``: the same estimate followed by a prox step on the regularizer.
* ``drfa_ga``: full-batch losses of every client at the global model,
  followed by one projected gradient-ascent step on the regularized objective.
* ``fedavg``: no dual variable; weights stay uniform.

AFL is ``drfa`` (or ``drfa_ga``) with ``tau = 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from .domain import (
    IterateAverager,
    MixtureWeights,
    ModelParams,
    PrimalDomainSpec,
    renormalize_exact,
    uniform_mixture,
    validate_mixture,
)
from .errors import ConfigError, NonFiniteIterate, NonFiniteLoss
from .geometry import ProxProblem, project_primal, project_simplex, prox_simplex
from .objectives import (
    FULL,
    NO_REGULARIZER,
    Federation,
    RegularizerSpec,
    all_losses,
    eval_grad,
    eval_loss,
    eval_regularizer,
)
from .sampling import (
    RngStream,
    draw_minibatch,
    sample_clients_uniform,
    sample_clients_weighted,
    sample_snapshot_step,
    slot_numbers,
)

ALGORITHMS = ("drfa", "drfa_prox", "drfa_ga", "fedavg")
OUTPUT_MODES = ("averaged", "last_iterate", "tail_averaged")


@dataclass(frozen=True)
class AlgoConfig:
    """Hyperparameters of one run.

    ``batch_primal`` / ``batch_probe`` of ``None`` mean full-batch evaluation.
    ``w0`` and ``lambda0`` default to zeros and uniform weights.
    """

    algorithm: str = "drfa"
    T: int = 1000
    tau: int = 10
    m: int = 1
    eta: float = 0.1
    gamma: float = 0.01
    batch_primal: int | None = 1
    batch_probe: int | None = 1
    primal_domain: PrimalDomainSpec = PrimalDomainSpec()
    regularizer: RegularizerSpec = NO_REGULARIZER
    output_mode: str = "averaged"
    ga_grad_at: str = "stage_start"
    w0: tuple | None = None
    lambda0: tuple | None = None

    @property
    def stages(self) -> int:
        return self.T // self.tau

    def validate(self, n_clients: int | None = None) -> AlgoConfig:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.output_mode not in OUTPUT_MODES:
            raise ConfigError(f"unknown output_mode {self.output_mode!r}")
        if self.ga_grad_at not in ("stage_start", "stage_end"):
            raise ConfigError(f"ga_grad_at must be stage_start or stage_end, got {self.ga_grad_at!r}")
        if self.tau < 1 or self.T < 1 or self.T % self.tau:
            raise ConfigError(f"T={self.T} must be a positive multiple of tau={self.tau}")
        if not self.eta >= 0 or not math.isfinite(self.eta):
            raise ConfigError("eta must be finite and >= 0")
        if self.algorithm != "fedavg" and not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigError("gamma must be finite and > 0")
        if self.m < 1 or (n_clients is not None and self.m > n_clients):
            raise ConfigError(f"m={self.m} must lie in 1..N")
        for b in (self.batch_primal, self.batch_probe):
            if b is not None and b < 1:
                raise ConfigError("batch sizes must be >= 1 (or None for full batch)")
        if self.algorithm == "drfa" and self.regularizer.kind != "none":
            raise ConfigError("drfa handles the unregularized objective only; use drfa_prox or drfa_ga")
        if self.lambda0 is not None:
            lam = validate_mixture(self.lambda0)
            if n_clients is not None and lam.size != n_clients:
                raise ConfigError("lambda0 must have one entry per client")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["primal_domain"] = self.primal_domain.to_dict()
        d["regularizer"] = self.regularizer.to_dict()
        d["w0"] = list(self.w0) if self.w0 is not None else None
        d["lambda0"] = list(self.lambda0) if self.lambda0 is not None else None
        return d


@dataclass
class StageTranscript:
    stage: int
    sampled_devices: list[int]
    probe_devices: list[int]
    snapshot_step: int | None
    comm_exchanges: int
    lambda_after: MixtureWeights


@dataclass
class RunResult:
    w_hat: ModelParams
    lambda_hat: MixtureWeights
    w_last: ModelParams
    lambda_last: MixtureWeights
    transcripts: list[StageTranscript]
    metric_series: list = field(default_factory=list)
    config_echo: dict = field(default_factory=dict)
    seed: int = 0
    lambda_initial: MixtureWeights | None = None

    @property
    def lambda_trace(self) -> list[np.ndarray]:
        """lambda^(0), ..., lambda^(S)."""
        return [self.lambda_initial] + [t.lambda_after for t in self.transcripts]


# ---------------------------------------------------------------------------
# building blocks


def _stream_generator(rng, client: int, slot: int):
    if isinstance(rng, RngStream):
        return replace(rng, client_id=client, slot=slot).generator()
    return rng


def run_local_window(
    fed: Federation,
    i: int,
    w_start: ModelParams,
    eta: float,
    tau: int,
    k_snap: int,
    spec: PrimalDomainSpec,
    rng,
    batch: int | None = 1,
    accumulate_from: int = 1,
    stage: int = 0,
) -> tuple[ModelParams, ModelParams, np.ndarray]:
    """Run ``tau`` projected SGD steps of client ``i`` from ``w_start``.

    Returns the end point, the iterate after ``k_snap`` steps, and the sum of
    the post-update iterates of steps ``accumulate_from..tau`` (zeros if that
    range is empty). ``rng`` is a generator or a stream; minibatches are
    drawn from it in step order.
    """
    if not 1 <= k_snap <= tau:
        raise ValueError(f"snapshot step {k_snap} outside 1..{tau}")
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    shard = fed.shards[i]
    w = np.asarray(w_start, dtype=np.float64).copy()
    snapshot = None
    total = np.zeros_like(w)
    for k in range(1, tau + 1):
        idx = FULL if batch is None else draw_minibatch(shard, batch, gen)
        if eta == 0.0:
            step = w
        else:
            try:
                step = w - eta * eval_grad(fed, i, w, idx)
            except FloatingPointError:
                raise NonFiniteIterate(stage, k) from None
        if not np.all(np.isfinite(step)):
            raise NonFiniteIterate(stage, k)
        w = project_primal(step, spec)
        if k == k_snap:
            snapshot = w.copy()
        if k >= accumulate_from:
            total += w
    return w, snapshot, total


def build_probe_vector(
    fed: Federation,
    probe_ids,
    w_snapshot: ModelParams,
    n: int,
    m: int,
    batch_probe: int | None,
    rng,
) -> np.ndarray:
    """Loss-probe vector: ``v_i = (N/m) * f_i(w; xi_i)`` summed over draws of i.

    ``rng`` may be a stream (each probe draw then gets its own substream
    keyed by client id and occurrence) or a generator used sequentially.
    """
    v = np.zeros(n)
    scale = n / m
    for client, slot in zip(probe_ids, slot_numbers(probe_ids)):
        client = int(client)
        if batch_probe is None:
            idx = FULL
        else:
            idx = draw_minibatch(fed.shards[client], batch_probe, _stream_generator(rng, client, slot))
        v[client] += scale * eval_loss(fed, client, w_snapshot, idx)
    if not np.all(np.isfinite(v)):
        raise NonFiniteLoss("probe vector is not finite")
    return v


def drfa_lambda_step(lam: MixtureWeights, v: np.ndarray, tau: int, gamma: float) -> MixtureWeights:
    return project_simplex(lam + (tau * gamma) * v)


def drfa_prox_lambda_step(
    lam: MixtureWeights, v: np.ndarray, tau: int, gamma: float, g: RegularizerSpec
) -> MixtureWeights:
    anchor = lam + (tau * gamma) * v
    return prox_simplex(ProxProblem(anchor, gamma, float(tau), g))


def drfa_ga_lambda_step(
    lam: MixtureWeights, full_losses: np.ndarray, gamma: float, g: RegularizerSpec
) -> MixtureWeights:
    full_losses = np.asarray(full_losses, dtype=np.float64)
    if full_losses.shape != lam.shape or not np.all(np.isfinite(full_losses)):
        raise NonFiniteLoss("full-batch losses must be finite, one per client")
    _, dg = eval_regularizer(g, lam)
    return project_simplex(lam + gamma * (full_losses + dg))


# ---------------------------------------------------------------------------
# step-size presets


def largest_divisor_at_most(T: int, x: float) -> int:
    target = max(1, int(math.floor(x)))
    for tau in range(min(target, T), 0, -1):
        if T % tau == 0:
            return tau
    return 1


def theorem1_preset(T: int, m: int, L: float) -> dict:
    """Convex-linear schedule: tau ~ T^(1/4)/sqrt(m), eta = 1/(4 L sqrt(T)), gamma = T^(-5/8).

    tau is rounded down to a divisor of T.
    """
    return {
        "tau": largest_divisor_at_most(T, T**0.25 / math.sqrt(m)),
        "eta": 1.0 / (4.0 * L * math.sqrt(T)),
        "gamma": T ** (-5.0 / 8.0),
    }


def theorem2_preset(T: int, mu: float, L: float) -> dict:
    """Strongly-convex-strongly-concave schedule for drfa_ga: eta = 4 log T/(mu T), gamma = 1/L."""
    return {"eta": 4.0 * math.log(T) / (mu * T), "gamma": 1.0 / L}


# ---------------------------------------------------------------------------
# runners

# (stage, iteration, comm_rounds, w_bar, lam, w_tail) -> record. ``w_tail`` is the
# mean of the server models over stages (s/2, s], a cheap stand-in for the
# averaged output had the run stopped at stage s.
Evaluator = Callable[[int, int, int, np.ndarray, np.ndarray, np.ndarray], object]


def _mean_rows(rows: list[np.ndarray]) -> np.ndarray:
    return np.add.reduce(np.vstack(rows), axis=0) / len(rows)


def _run(fed: Federation, cfg: AlgoConfig, seed: int, evaluator: Evaluator | None, eval_stride: int) -> RunResult:
    cfg.validate(fed.n_clients)
    n, m, tau, T = fed.n_clients, cfg.m, cfg.tau, cfg.T
    algo = cfg.algorithm
    w_bar = np.zeros(fed.param_dim) if cfg.w0 is None else np.array(cfg.w0, dtype=np.float64)
    if w_bar.size != fed.param_dim:
        raise ConfigError(f"w0 has dimension {w_bar.size}, model needs {fed.param_dim}")
    w_bar = project_primal(w_bar, cfg.primal_domain)
    lam = uniform_mixture(n) if cfg.lambda0 is None or algo == "fedavg" else validate_mixture(cfg.lambda0)
    lam_initial = lam.copy()

    w_avg, lam_avg = IterateAverager(), IterateAverager()
    transcripts: list[StageTranscript] = []
    series = []
    exchanges = 1 if algo == "fedavg" else 2
    comm = 0
    prefix = [np.zeros_like(w_bar)]
    if evaluator is not None:
        series.append(evaluator(0, 0, 0, w_bar, lam, w_bar.copy()))

    for s in range(cfg.stages):
        lam_avg.push(lam)
        if algo == "fedavg":
            devices = sample_clients_uniform(n, m, RngStream(seed, "device_select", s))
        else:
            devices = sample_clients_weighted(lam, m, RngStream(seed, "device_select", s))
        k_snap = sample_snapshot_step(tau, RngStream(seed, "snapshot", s)) if algo in ("drfa", "drfa_prox") else tau
        if cfg.output_mode == "tail_averaged":
            first = max(1, T // 2 - s * tau + 1)
        else:
            first = 1

        ends, snaps = [], []
        for client, slot in zip(devices, slot_numbers(devices)):
            client = int(client)
            w_end, w_snap, iter_sum = run_local_window(
                fed, client, w_bar, cfg.eta, tau, k_snap, cfg.primal_domain,
                RngStream(seed, "minibatch", s, client, slot), cfg.batch_primal, first, s,
            )
            ends.append(w_end)
            snaps.append(w_snap)
            if first <= tau:
                w_avg.push(iter_sum, weight=tau - first + 1)
        w_next = _mean_rows(ends)

        probes: list[int] = []
        if algo in ("drfa", "drfa_prox"):
            w_snapshot = _mean_rows(snaps)
            probe_ids = sample_clients_uniform(n, m, RngStream(seed, "uniform_select", s))
            probes = [int(u) for u in probe_ids]
            v = build_probe_vector(
                fed, probe_ids, w_snapshot, n, m, cfg.batch_probe, RngStream(seed, "probe_minibatch", s)
            )
            if algo == "drfa":
                lam = drfa_lambda_step(lam, v, tau, cfg.gamma)
            else:
                lam = drfa_prox_lambda_step(lam, v, tau, cfg.gamma, cfg.regularizer)
        elif algo == "drfa_ga":
            at = w_bar if cfg.ga_grad_at == "stage_start" else w_next
            probes = list(range(n))
            lam = drfa_ga_lambda_step(lam, all_losses(fed, at), cfg.gamma, cfg.regularizer)

        w_bar = w_next
        prefix.append(prefix[-1] + w_bar)
        comm += exchanges
        transcripts.append(
            StageTranscript(s, [int(d) for d in devices], probes,
                            k_snap if algo in ("drfa", "drfa_prox") else None, exchanges, lam.copy())
        )
        if evaluator is not None and ((s + 1) % eval_stride == 0 or s + 1 == cfg.stages):
            half = (s + 1) // 2
            w_tail = (prefix[s + 1] - prefix[half]) / (s + 1 - half)
            series.append(evaluator(s + 1, (s + 1) * tau, comm, w_bar, lam, w_tail))

    if cfg.output_mode == "last_iterate":
        w_hat, lam_hat = w_bar.copy(), lam.copy()
    else:
        w_hat = w_avg.mean()
        lam_hat = renormalize_exact(lam_avg.mean())
    return RunResult(
        w_hat, lam_hat, w_bar.copy(), lam.copy(), transcripts, series, cfg.to_dict(), seed, lam_initial
    )


def _expect(cfg: AlgoConfig, algo: str) -> None:
    if cfg.algorithm != algo:
        raise ConfigError(f"config is for {cfg.algorithm!r}, expected {algo!r}")


def run_drfa(fed, cfg: AlgoConfig, seed: int, evaluator: Evaluator | None = None, eval_stride: int = 1) -> RunResult:
    _expect(cfg, "drfa")
    return _run(fed, cfg, seed, evaluator, eval_stride)


def run_drfa_prox(fed, cfg: AlgoConfig, seed: int, evaluator: Evaluator | None = None, eval_stride: int = 1) -> RunResult:
    _expect(cfg, "drfa_prox")
    return _run(fed, cfg, seed, evaluator, eval_stride)


def run_drfa_ga(fed, cfg: AlgoConfig, seed: int, evaluator: Evaluator | None = None, eval_stride: int = 1) -> RunResult:
    _expect(cfg, "drfa_ga")
    return _run(fed, cfg, seed, evaluator, eval_stride)


def run_fedavg(fed, cfg: AlgoConfig, seed: int, evaluator: Evaluator | None = None, eval_stride: int = 1) -> RunResult:
    _expect(cfg, "fedavg")
    return _run(fed, cfg, seed, evaluator, eval_stride)


def run_algorithm(fed, cfg: AlgoConfig, seed: int, evaluator: Evaluator | None = None, eval_stride: int = 1) -> RunResult:
    """Dispatch on ``cfg.algorithm``."""
    return _run(fed, cfg, seed, evaluator, eval_stride)
