"""``drofa`` command line: run, compare, sweep and oracle-check."""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import DrofaError
from .harness import (
    load_config,
    print_crossings,
    run_experiment,
    compare,
    sweep,
)


def _seeds(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _overrides(args) -> dict:
    return {
        "seeds": args.seed,
        "output_dir": args.out,
        "eval_every": args.eval_every,
        "preset": args.preset,
    }


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=_seeds, help="comma-separated seeds, replaces the config's list")
    p.add_argument("--out", help="output directory (DROFA_OUT still takes precedence)")
    p.add_argument("--eval-every", type=int, help="evaluation period in iterations")
    p.add_argument("--preset", choices=["theorem1", "theorem2_appendix"])


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    bundle = run_experiment(cfg)
    agg = bundle.summary["aggregate"]
    print(f"wrote {bundle.output_dir}/metrics.csv, summary.json, lambda_trace.csv")
    for key, stats in agg.items():
        if stats is not None:
            print(f"  final {key:<13} {stats['mean']:.6g} +/- {stats['std']:.3g}")
    return 0


def cmd_compare(args) -> int:
    ov = _overrides(args)
    ov["output_dir"] = None
    cfgs = [load_config(p, ov) for p in args.configs]
    res = compare(cfgs, args.out, metric=args.metric, thresholds=args.threshold or [0.5])
    print_crossings(res)
    return 0


def cmd_sweep(args) -> int:
    ov = _overrides(args)
    ov["output_dir"] = None
    cfg = load_config(args.config, ov)
    values = [_parse_value(v) for v in args.values.split(",")]
    res = sweep(cfg, args.param, values, args.out, metric=args.metric, thresholds=args.threshold or [0.5])
    print_crossings(res)
    return 0


def oracle_checks(n_vectors: int = 1000, seed: int = 0) -> list[tuple[str, bool, float]]:
    """Cross-check the fast projection, prox and inner-max paths against the oracles."""
    from .geometry import ProxProblem, project_simplex, prox_simplex
    from .metrics import maximize_over_simplex
    from .objectives import RegularizerSpec
    from .oracle import brute_force_simplex_projection, grid_max_over_simplex, grid_prox

    rng = np.random.default_rng(seed)
    out = []
    dev = 0.0
    for _ in range(n_vectors):
        v = rng.normal(scale=2.0, size=int(rng.integers(1, 17)))
        dev = max(dev, float(np.max(np.abs(project_simplex(v) - brute_force_simplex_projection(v)))))
    out.append(("simplex projection", dev < 1e-9, dev))

    regs = [RegularizerSpec.quadratic(1.0), RegularizerSpec.kl(0.5)]
    dev = 0.0
    for n in (2, 3):
        for g in regs:
            for _ in range(3):
                a = rng.random(n)
                fast = prox_simplex(ProxProblem(a, 0.3, 1.0, g))
                _, ref = grid_prox(a, 0.3, 1.0, g, 1e-5)
                dev = max(dev, float(np.max(np.abs(fast - ref))))
    out.append(("simplex prox", dev < 1e-4, dev))

    dev = 0.0
    for n in (2, 3):
        for g in regs:
            f = rng.random(n) * 3
            dev = max(dev, abs(maximize_over_simplex(f, g)[0] - grid_max_over_simplex(f, g, 1e-5)[0]))
    out.append(("regularized inner max", dev < 1e-4, dev))

    from .metrics import primal_dual_gap
    from .objectives import make_quadratic_federation
    from .oracle import SaddleProblem, saddle_point_oracle

    fed = make_quadratic_federation(rng.normal(size=(3, 2)))
    worst = 0.0
    for g in [RegularizerSpec()] + regs:
        sol = saddle_point_oracle(SaddleProblem.from_federation(fed, g))
        worst = max(worst, abs(primal_dual_gap(fed, sol.w_star, sol.lambda_star, g)), *sol.residuals)
    out.append(("saddle certificate", worst < 1e-10, worst))
    return out


def cmd_oracle_check(args) -> int:
    results = oracle_checks(args.n_vectors, args.seed_value)
    for name, ok, dev in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name:<24} max deviation {dev:.3e}")
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drofa", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one config over its seeds")
    p.add_argument("config")
    _common(p)
    p.set_defaults(func=cmd_run)

    for name, func in (("compare", cmd_compare), ("sweep", cmd_sweep)):
        p = sub.add_parser(name, help=f"{name} configs and report threshold crossings")
        if name == "compare":
            p.add_argument("configs", nargs="+")
        else:
            p.add_argument("config")
            p.add_argument("--param", required=True, help="e.g. tau, algo.gamma, federation.noise")
            p.add_argument("--values", required=True, help="comma-separated values")
        p.add_argument("--metric", default="worst_acc")
        p.add_argument("--threshold", type=float, action="append")
        _common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("oracle-check", help="cross-check fast paths against brute-force oracles")
    p.add_argument("--n-vectors", type=int, default=1000)
    p.add_argument("--seed", dest="seed_value", type=int, default=0)
    p.set_defaults(func=cmd_oracle_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DrofaError, OSError) as exc:
        print(f"drofa: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
