"""Experiment configuration, orchestration and persistence.

A config is a JSON object with a strict schema. ``run_experiment`` runs one
algorithm over a list of seeds and writes three files: ``metrics.csv`` (one row
per evaluated stage and seed), ``summary.json`` (final metrics of the returned
model plus the fully defaulted config) and ``lambda_trace.csv``.
"""

from __future__ import annotations

import copy
import csv
import difflib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy

from .algorithms import ALGORITHMS, AlgoConfig, run_algorithm, theorem1_preset, theorem2_preset
from .domain import PrimalDomainSpec
from .errors import MisalignedConfigs, SchemaError
from .metrics import evaluate_record, phi_linear
from .objectives import (
    Federation,
    RegularizerSpec,
    load_csv_federation,
    make_quadratic_federation,
    make_synthetic_federation,
    smoothness_bound,
)

__all__ = [
    "METRIC_COLUMNS",
    "ExperimentConfig",
    "ResultsBundle",
    "ComparisonResult",
    "load_config",
    "parse_config",
    "build_federation",
    "run_experiment",
    "read_metrics_csv",
    "compare",
    "sweep",
]

METRIC_COLUMNS = (
    "seed", "stage", "iteration", "comm_rounds", "avg_loss", "worst_loss",
    "worst_client", "worst_acc", "avg_acc", "fairness_std", "gamma_est",
)
_INT_COLUMNS = {"seed", "stage", "iteration", "comm_rounds", "worst_client"}

PRESETS = ("theorem1", "theorem2_appendix")
EVAL_MODELS = ("tail_average", "server")

_TOP_DEFAULTS = {
    "label": None,
    "federation": None,
    "algo": None,
    "seeds": list(range(10)),
    "eval_every": None,
    "eval_model": "tail_average",
    "output_dir": "drofa_out",
    "preset": None,
    "preset_constants": {"L": None, "mu": None},
}

_FEDERATION_DEFAULTS = {
    "synthetic": {
        "kind": "synthetic",
        "n_clients": 10,
        "dim": 8,
        "samples_per_client": 300,
        "heterogeneity": "one_class_per_client",
        "alpha": 0.0,
        "n_classes": None,
        "radius": 3.0,
        "radius_spread": 0.0,
        "noise": 1.0,
        "objective": "logistic_regression",
        "l2_term": 0.0,
        "intercept": True,
        "holdout_per_client": 0,
        "seed": None,
    },
    "quadratic": {
        "kind": "quadratic",
        "centers": None,
        "curvature": 1.0,
        "l2_term": 0.0,
        "samples_per_client": 1,
        "noise": 0.0,
        "seed": None,
    },
    "csv": {
        "kind": "csv",
        "path": None,
        "partition": "by_label",
        "label_column": -1,
        "header": False,
        "objective": "logistic_regression",
        "l2_term": 0.0,
    },
}

_ALGO_DEFAULTS = AlgoConfig().to_dict()

# Common names people reach for, mapped to the schema's spelling.
_ALIASES = {
    "learning_rate": "eta",
    "learning_rate_w": "eta",
    "lr": "eta",
    "lr_w": "eta",
    "step_size": "eta",
    "learning_rate_lambda": "gamma",
    "learning_rate_lam": "gamma",
    "lr_lambda": "gamma",
    "dual_step": "gamma",
    "sync_gap": "tau",
    "local_steps": "tau",
    "clients_per_round": "m",
    "num_clients_sampled": "m",
    "iterations": "T",
    "num_iterations": "T",
    "batch_size": "batch_primal",
    "seed": "seeds",
    "out": "output_dir",
}


def _reject_unknown(raw: dict, allowed, where: str) -> None:
    for key in raw:
        if key in allowed:
            continue
        hint = _ALIASES.get(key)
        if hint is None or hint not in allowed:
            close = difflib.get_close_matches(key, list(allowed), n=1)
            hint = close[0] if close else None
        reason = f"unknown key in {where}"
        if hint:
            reason += f"; did you mean {hint!r}?"
        raise SchemaError(key, reason)


def _need(cond: bool, key: str, reason: str) -> None:
    if not cond:
        raise SchemaError(key, reason)


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


@dataclass(frozen=True)
class ExperimentConfig:
    """Parsed, fully defaulted experiment description.

    ``federation`` stays a plain dict (it is echoed verbatim into the summary);
    a federation ``seed`` of ``None`` means each run seed also seeds the data.
    ``eval_every`` counts iterations; metrics are only taken at stage
    boundaries, every ``eval_stride`` stages.
    """

    federation: dict
    algo: AlgoConfig
    seeds: tuple[int, ...] = tuple(range(10))
    eval_every: int = 10
    eval_model: str = "tail_average"
    output_dir: str = "drofa_out"
    preset: str | None = None
    preset_constants: dict = field(default_factory=lambda: {"L": None, "mu": None})
    label: str | None = None

    @property
    def eval_stride(self) -> int:
        return max(1, self.eval_every // self.algo.tau)

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return f"{self.algo.algorithm}_tau{self.algo.tau}"

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "federation": copy.deepcopy(self.federation),
            "algo": self.algo.to_dict(),
            "seeds": list(self.seeds),
            "eval_every": self.eval_every,
            "eval_model": self.eval_model,
            "output_dir": self.output_dir,
            "preset": self.preset,
            "preset_constants": dict(self.preset_constants),
        }


def _parse_federation(raw) -> dict:
    _need(isinstance(raw, dict), "federation", "must be an object")
    kind = raw.get("kind", "synthetic")
    _need(kind in _FEDERATION_DEFAULTS, "federation.kind", f"must be one of {sorted(_FEDERATION_DEFAULTS)}")
    spec = copy.deepcopy(_FEDERATION_DEFAULTS[kind])
    _reject_unknown(raw, spec, "federation")
    spec.update(copy.deepcopy(raw))
    if kind == "synthetic":
        for key in ("n_clients", "dim", "samples_per_client"):
            _need(_is_int(spec[key]) and spec[key] >= 1, key, "must be a positive integer")
        _need(_is_int(spec["holdout_per_client"]) and spec["holdout_per_client"] >= 0,
              "holdout_per_client", "must be a nonnegative integer")
        _need(0.0 <= spec["radius_spread"] <= 1.0, "radius_spread", "must lie in [0, 1]")
    elif kind == "quadratic":
        C = spec["centers"]
        _need(isinstance(C, list) and len(C) > 0, "centers", "must be a nonempty list of points")
        rows = [c if isinstance(c, list) else [c] for c in C]
        _need(len({len(r) for r in rows}) == 1, "centers", "all centers need the same dimension")
        spec["centers"] = rows
    else:
        _need(isinstance(spec["path"], str), "path", "csv federation needs a file path")
        part = spec["partition"]
        if isinstance(part, dict):
            _need(set(part) == {"by_column"} and _is_int(part["by_column"]), "partition",
                  'must be "by_label" or {"by_column": <index>}')
        else:
            _need(part == "by_label", "partition", 'must be "by_label" or {"by_column": <index>}')
    seed = spec.get("seed")
    if seed is not None:
        _need(_is_int(seed) and seed >= 0, "federation.seed", "must be a nonnegative integer or null")
    return spec


def build_federation(spec: dict, run_seed: int = 0) -> Federation:
    """Materialize a federation dict; a ``None`` data seed uses ``run_seed``."""
    kind = spec["kind"]
    seed = run_seed if spec.get("seed") is None else spec["seed"]
    if kind == "synthetic":
        return make_synthetic_federation(
            spec["n_clients"], spec["dim"], spec["samples_per_client"], spec["heterogeneity"],
            spec["alpha"], seed, n_classes=spec["n_classes"], radius=spec["radius"],
            radius_spread=spec["radius_spread"], noise=spec["noise"], objective=spec["objective"],
            l2_term=spec["l2_term"], intercept=spec["intercept"],
            holdout_per_client=spec["holdout_per_client"],
        )
    if kind == "quadratic":
        return make_quadratic_federation(
            np.array(spec["centers"], dtype=np.float64), spec["curvature"], spec["l2_term"],
            spec["samples_per_client"], spec["noise"], seed,
        )
    part = spec["partition"]
    if isinstance(part, dict):
        part = ("by_column", part["by_column"])
    return load_csv_federation(
        spec["path"], part, label_column=spec["label_column"], header=spec["header"],
        objective=spec["objective"], l2_term=spec["l2_term"],
    )


def _parse_algo(raw, fed_spec: dict) -> AlgoConfig:
    _need(isinstance(raw, dict), "algo", "must be an object")
    _reject_unknown(raw, _ALGO_DEFAULTS, "algo")
    d = dict(_ALGO_DEFAULTS)
    d.update(raw)
    _need(d["algorithm"] in ALGORITHMS, "algorithm", f"must be one of {list(ALGORITHMS)}")
    for key in ("T", "tau", "m"):
        _need(_is_int(d[key]) and d[key] >= 1, key, "must be a positive integer")
    for key in ("eta", "gamma"):
        _need(_is_num(d[key]) and d[key] >= 0, key, "must be a finite nonnegative number")
    for key in ("batch_primal", "batch_probe"):
        _need(d[key] is None or (_is_int(d[key]) and d[key] >= 1), key, "must be a positive integer or null")
    reg = d["regularizer"] or {}
    _need(isinstance(reg, dict), "regularizer", "must be an object")
    _reject_unknown(reg, {"kind", "strength"}, "regularizer")
    dom = d["primal_domain"] or {}
    _need(isinstance(dom, dict), "primal_domain", "must be an object")
    _reject_unknown(dom, {"kind", "radius"}, "primal_domain")
    try:
        regularizer = RegularizerSpec(reg.get("kind", "none"), reg.get("strength", 0.0))
    except ValueError as exc:
        raise SchemaError("regularizer", str(exc)) from exc
    try:
        domain = PrimalDomainSpec(dom.get("kind", "unconstrained"), dom.get("radius"))
    except ValueError as exc:
        raise SchemaError("primal_domain", str(exc)) from exc
    return AlgoConfig(
        algorithm=d["algorithm"], T=d["T"], tau=d["tau"], m=d["m"], eta=float(d["eta"]),
        gamma=float(d["gamma"]), batch_primal=d["batch_primal"], batch_probe=d["batch_probe"],
        primal_domain=domain, regularizer=regularizer, output_mode=d["output_mode"],
        ga_grad_at=d["ga_grad_at"],
        w0=tuple(float(x) for x in d["w0"]) if d["w0"] is not None else None,
        lambda0=tuple(float(x) for x in d["lambda0"]) if d["lambda0"] is not None else None,
    )


def _apply_preset(algo: AlgoConfig, preset: str, fed_spec: dict, seed: int, constants: dict):
    L, mu = constants.get("L"), constants.get("mu")
    if L is None or (preset == "theorem2_appendix" and mu is None):
        fed = build_federation(fed_spec, seed)
        L = smoothness_bound(fed) if L is None else L
        mu = fed.objective.strong_convexity if mu is None else mu
    resolved = {"L": float(L), "mu": None if mu is None else float(mu)}
    if preset == "theorem1":
        p = theorem1_preset(algo.T, algo.m, L)
        return replace(algo, tau=p["tau"], eta=p["eta"], gamma=p["gamma"]), resolved
    _need(mu is not None and mu > 0, "preset", "theorem2_appendix needs a strongly convex objective (mu > 0)")
    p = theorem2_preset(algo.T, mu, L)
    return replace(algo, eta=p["eta"], gamma=p["gamma"]), resolved


def parse_config(raw: dict, overrides: dict | None = None) -> ExperimentConfig:
    """Validate a config object (plus CLI-style overrides) into an ExperimentConfig."""
    _need(isinstance(raw, dict), "<root>", "config must be a JSON object")
    raw = copy.deepcopy(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    _reject_unknown(raw, _TOP_DEFAULTS, "config")
    d = copy.deepcopy(_TOP_DEFAULTS)
    d.update(raw)
    _need(d["federation"] is not None, "federation", "required")
    _need(d["algo"] is not None, "algo", "required")
    fed_spec = _parse_federation(d["federation"])

    seeds = d["seeds"]
    if _is_int(seeds):
        seeds = [seeds]
    _need(isinstance(seeds, list) and len(seeds) > 0, "seeds", "must be a nonempty list")
    _need(all(_is_int(s) and s >= 0 for s in seeds), "seeds", "entries must be nonnegative integers")

    algo = _parse_algo(d["algo"], fed_spec)
    preset = d["preset"]
    _need(preset is None or preset in PRESETS, "preset", f"must be null or one of {list(PRESETS)}")
    constants = d["preset_constants"] or {}
    _need(isinstance(constants, dict), "preset_constants", "must be an object")
    _reject_unknown(constants, {"L", "mu"}, "preset_constants")
    constants = {"L": constants.get("L"), "mu": constants.get("mu")}
    if preset is not None:
        algo, constants = _apply_preset(algo, preset, fed_spec, seeds[0], constants)

    _need(algo.T % algo.tau == 0, "tau", f"tau={algo.tau} must divide T={algo.T}")
    try:
        algo.validate()
    except ValueError as exc:
        raise SchemaError("algo", str(exc)) from exc

    every = d["eval_every"]
    every = algo.tau if every is None else every
    _need(_is_int(every) and every >= 1, "eval_every", "must be a positive integer")
    _need(algo.tau % every == 0 or every % algo.tau == 0, "eval_every",
          f"must divide tau={algo.tau} or be a multiple of it (evaluation happens at stage boundaries)")
    _need(d["eval_model"] in EVAL_MODELS, "eval_model", f"must be one of {list(EVAL_MODELS)}")
    _need(isinstance(d["output_dir"], str), "output_dir", "must be a string")
    _need(d["label"] is None or isinstance(d["label"], str), "label", "must be a string or null")

    return ExperimentConfig(
        federation=fed_spec,
        algo=algo,
        seeds=tuple(seeds),
        eval_every=every,
        eval_model=d["eval_model"],
        output_dir=d["output_dir"],
        preset=preset,
        preset_constants=constants,
        label=d["label"],
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read and validate a JSON config file. Missing files raise OSError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("<root>", f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    return parse_config(raw, overrides)


# ---------------------------------------------------------------------------
# running


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _row(seed: int, rec) -> dict:
    def opt(x):
        return None if isinstance(x, float) and math.isnan(x) else float(x)

    return {
        "seed": seed,
        "stage": rec.stage,
        "iteration": rec.iteration,
        "comm_rounds": rec.comm_rounds,
        "avg_loss": float(rec.avg_loss),
        "worst_loss": float(rec.worst_loss),
        "worst_client": int(rec.worst_client),
        "worst_acc": opt(rec.worst_accuracy),
        "avg_acc": opt(rec.avg_accuracy),
        "fairness_std": opt(rec.fairness_std),
        "gamma_est": float(rec.gamma_estimate),
    }


def read_metrics_csv(path) -> list[dict]:
    """Parse ``metrics.csv`` back into the row dicts held by ResultsBundle."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            row = {}
            for key in METRIC_COLUMNS:
                cell = rec[key]
                if cell == "":
                    row[key] = None
                elif key in _INT_COLUMNS:
                    row[key] = int(cell)
                else:
                    row[key] = float(cell)
            rows.append(row)
    return rows


def _json_clean(x):
    if isinstance(x, dict):
        return {k: _json_clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_json_clean(v) for v in x.tolist()]
    if isinstance(x, np.generic):
        return _json_clean(x.item())
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def dump_json(obj) -> str:
    return json.dumps(_json_clean(obj), indent=2) + "\n"


@dataclass
class ResultsBundle:
    """In-memory mirror of the files written by ``run_experiment``.

    ``rows`` matches ``metrics.csv`` exactly; ``curves`` maps each metric to
    per-stage mean and standard deviation over seeds; ``timings`` holds
    wall-clock seconds per phase and is never written to disk.
    """

    config: ExperimentConfig
    rows: list[dict]
    runs: list[dict]
    lambda_trace: list[list]
    summary: dict
    curves: dict
    timings: dict
    output_dir: Path | None


def _curves(rows: list[dict]) -> dict:
    stages = sorted({r["stage"] for r in rows})
    out = {}
    for metric in ("avg_loss", "worst_loss", "worst_acc", "avg_acc", "fairness_std", "gamma_est"):
        mean, std, comm = [], [], []
        for s in stages:
            vals = [r[metric] for r in rows if r["stage"] == s and r[metric] is not None]
            comm.append(next(r["comm_rounds"] for r in rows if r["stage"] == s))
            mean.append(float(np.mean(vals)) if vals else math.nan)
            std.append(float(np.std(vals)) if vals else math.nan)
        out[metric] = {"stage": np.array(stages), "comm_rounds": np.array(comm),
                       "mean": np.array(mean), "std": np.array(std)}
    return out


def _versions() -> dict:
    from . import __version__

    return {"drofa": __version__, "numpy": np.__version__, "scipy": scipy.__version__}


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ResultsBundle:
    """Run ``cfg.algo`` once per seed, evaluating at stage boundaries.

    With ``write`` the three output files go to ``$DROFA_OUT`` if set, else
    ``cfg.output_dir``. Metric rows are flushed as they are produced; if a run
    raises, ``summary.json`` records the failure before the error propagates.
    """
    out_dir = None
    if write:
        out_dir = Path(os.environ.get("DROFA_OUT") or cfg.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
    metrics_fh = open(out_dir / "metrics.csv", "w", newline="", encoding="utf-8") if write else io.StringIO()
    writer = csv.writer(metrics_fh, lineterminator="\n")
    writer.writerow(METRIC_COLUMNS)
    metrics_fh.flush()

    rows: list[dict] = []
    runs: list[dict] = []
    trace: list[list] = []
    timings = {"federation": 0.0, "run": 0.0, "final_eval": 0.0}
    echo = cfg.to_dict()
    del echo["output_dir"]  # where the files land must not change their bytes
    summary = {"status": "running", "config": echo, "seeds": list(cfg.seeds), "versions": _versions()}
    try:
        for seed in cfg.seeds:
            t0 = time.perf_counter()
            fed = build_federation(cfg.federation, seed)
            timings["federation"] += time.perf_counter() - t0

            def evaluator(stage, iteration, comm, w_bar, lam, w_tail, fed=fed, seed=seed):
                model = w_tail if cfg.eval_model == "tail_average" else w_bar
                row = _row(seed, evaluate_record(fed, model, stage, iteration, comm))
                writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                metrics_fh.flush()
                rows.append(row)
                return row

            t0 = time.perf_counter()
            result = run_algorithm(fed, cfg.algo, seed, evaluator, cfg.eval_stride)
            timings["run"] += time.perf_counter() - t0

            t0 = time.perf_counter()
            for stage, lam in enumerate(result.lambda_trace):
                trace.append([seed, stage, *[float(x) for x in lam]])
            comm = sum(t.comm_exchanges for t in result.transcripts)
            final = _row(seed, evaluate_record(fed, result.w_hat, cfg.algo.stages, cfg.algo.T, comm))
            phi, _ = phi_linear(fed, result.w_hat)
            runs.append({
                "seed": seed,
                "final": {k: v for k, v in final.items() if k != "seed"},
                "phi_w_hat": phi,
                "w_hat": result.w_hat.tolist(),
                "lambda_hat": result.lambda_hat.tolist(),
            })
            timings["final_eval"] += time.perf_counter() - t0
    except BaseException as exc:
        summary.update(status="aborted", error=f"{type(exc).__name__}: {exc}", runs=runs)
        metrics_fh.close()
        if write:
            (out_dir / "summary.json").write_text(dump_json(summary), encoding="utf-8")
            _write_trace(out_dir, trace)
        raise
    metrics_fh.close()

    aggregate = {}
    for key in ("avg_loss", "worst_loss", "worst_acc", "avg_acc", "fairness_std"):
        vals = [r["final"][key] for r in runs if r["final"][key] is not None]
        aggregate[key] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))} if vals else None
    summary.update(status="complete", runs=runs, aggregate=aggregate)
    if write:
        (out_dir / "summary.json").write_text(dump_json(summary), encoding="utf-8")
        _write_trace(out_dir, trace)
    return ResultsBundle(cfg, rows, runs, trace, json.loads(dump_json(summary)), _curves(rows), timings, out_dir)


def _write_trace(out_dir: Path, trace: list[list]) -> None:
    width = max((len(r) - 2 for r in trace), default=0)
    with open(out_dir / "lambda_trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "stage", *[f"lambda_{i}" for i in range(width)]])
        for r in trace:
            w.writerow([_fmt(x) for x in r])


# ---------------------------------------------------------------------------
# comparisons


@dataclass
class ComparisonResult:
    """Long-format curves plus first-crossing statistics.

    ``crossings`` has one entry per (label, threshold) with the first
    ``comm_rounds`` and ``iteration`` at which each seed reached the threshold
    (``None`` if never), and the mean paired delta against the first config.
    """

    labels: list[str]
    long_rows: list[dict]
    crossings: list[dict]
    bundles: list[ResultsBundle]


def _crossing(rows: list[dict], seed: int, metric: str, threshold: float, key: str):
    higher = metric in ("worst_acc", "avg_acc")
    for r in rows:
        if r["seed"] != seed or r["stage"] == 0 or r[metric] is None:
            continue
        if (r[metric] >= threshold) if higher else (r[metric] <= threshold):
            return r[key]
    return None


def compare(
    cfgs: list[ExperimentConfig],
    out_dir=None,
    metric: str = "worst_acc",
    thresholds=(0.5,),
    same_federation: bool = True,
) -> ComparisonResult:
    """Run every config on the same federation and seeds and align the curves.

    Crossing points are the first evaluated stage whose ``metric`` reaches the
    threshold (from above for losses). Configs must share the seed list and,
    unless ``same_federation`` is off, the federation spec.
    """
    if not cfgs:
        raise MisalignedConfigs("nothing to compare")
    ref = cfgs[0]
    for c in cfgs[1:]:
        if same_federation and c.federation != ref.federation:
            raise MisalignedConfigs("configs must share the federation spec and its seed")
        if c.seeds != ref.seeds:
            raise MisalignedConfigs("configs must use the same seeds for paired comparison")
    if metric not in METRIC_COLUMNS[4:]:
        raise MisalignedConfigs(f"unknown metric {metric!r}")

    labels, seen = [], {}
    for c in cfgs:
        base = c.name
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}#{seen[base]}")

    root = None
    if out_dir is not None or os.environ.get("DROFA_OUT"):
        root = Path(out_dir if out_dir is not None else os.environ["DROFA_OUT"])
        root.mkdir(parents=True, exist_ok=True)
    bundles = []
    for c, label in zip(cfgs, labels):
        if root is not None:
            env = os.environ.pop("DROFA_OUT", None)
            try:
                bundles.append(run_experiment(replace(c, output_dir=str(root / label))))
            finally:
                if env is not None:
                    os.environ["DROFA_OUT"] = env
        else:
            bundles.append(run_experiment(c, write=False))

    long_rows = []
    for label, b in zip(labels, bundles):
        for r in b.rows:
            for m in METRIC_COLUMNS[4:]:
                long_rows.append({"label": label, "seed": r["seed"], "stage": r["stage"],
                                  "iteration": r["iteration"], "comm_rounds": r["comm_rounds"],
                                  "metric": m, "value": r[m]})

    crossings = []
    for thr in thresholds:
        first_comm = {lab: [_crossing(b.rows, s, metric, thr, "comm_rounds") for s in ref.seeds]
                      for lab, b in zip(labels, bundles)}
        for lab, b in zip(labels, bundles):
            comm = first_comm[lab]
            iters = [_crossing(b.rows, s, metric, thr, "iteration") for s in ref.seeds]
            hit = [x for x in comm if x is not None]
            deltas = [a - r for a, r in zip(comm, first_comm[labels[0]]) if a is not None and r is not None]
            crossings.append({
                "label": lab, "metric": metric, "threshold": thr,
                "seeds": list(ref.seeds), "first_comm_rounds": comm, "first_iteration": iters,
                "n_crossed": len(hit), "mean_comm_rounds": float(np.mean(hit)) if hit else None,
                "mean_delta_vs_first": float(np.mean(deltas)) if deltas else None,
            })

    if root is not None:
        with open(root / "compare_long.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            cols = ["label", "seed", "stage", "iteration", "comm_rounds", "metric", "value"]
            w.writerow(cols)
            for r in long_rows:
                w.writerow([_fmt(r[c]) for c in cols])
        (root / "crossings.json").write_text(dump_json(crossings), encoding="utf-8")
    return ComparisonResult(labels, long_rows, crossings, bundles)


def _set_path(raw: dict, param: str, value) -> None:
    if "." in param:
        section, key = param.split(".", 1)
    elif param in _ALGO_DEFAULTS:
        section, key = "algo", param
    elif param in _TOP_DEFAULTS:
        section, key = None, param
    else:
        section, key = "federation", param
    if section is None:
        raw[key] = value
    else:
        raw.setdefault(section, {})[key] = value


def sweep(cfg: ExperimentConfig, param: str, values, out_dir=None, **compare_kw) -> ComparisonResult:
    """Compare copies of ``cfg`` that differ only in ``param``.

    ``param`` is an algo field (``tau``), a top-level key, a federation field,
    or a dotted path such as ``federation.noise``.
    """
    cfgs = []
    fed_param = False
    for v in values:
        raw = cfg.to_dict()
        raw["preset_constants"] = dict(cfg.preset_constants)
        _set_path(raw, param, v)
        raw["label"] = f"{param}={v}"
        if param.split(".")[-1] in ("tau", "eta", "gamma"):
            raw["preset"] = None  # an explicit sweep value wins over the preset
        if param.split(".")[-1] == "tau" and cfg.eval_every == cfg.algo.tau:
            raw["eval_every"] = None
        cfg_v = parse_config(raw)
        fed_param = fed_param or cfg_v.federation != cfg.federation
        cfgs.append(cfg_v)
    compare_kw.setdefault("same_federation", not fed_param)
    return compare(cfgs, out_dir, **compare_kw)


def print_crossings(res: ComparisonResult, file=None) -> None:
    file = sys.stdout if file is None else file
    for c in res.crossings:
        mean = "never" if c["mean_comm_rounds"] is None else f"{c['mean_comm_rounds']:.1f}"
        print(f"{c['label']:<24} {c['metric']}>={c['threshold']:g}: "
              f"{c['n_crossed']}/{len(c['seeds'])} seeds, mean comm rounds {mean}", file=file)
