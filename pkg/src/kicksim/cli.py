"""Command-line interface: ``kicksim run|sweep|compare|validate-config|bessel-check``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime dynamics error,
3 partial sweep failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from kicksim import __version__
from kicksim.bessel import DEFAULT_TAIL_TOL, build_kick_kernel, stochastic_row
from kicksim.errors import ConfigurationError, KicksimError
from kicksim.harness import (
    OUTPUT_DIR_ENV,
    ExperimentConfig,
    SweepPlan,
    atomic_write,
    compare_regimes,
    comparison_to_csv,
    load_bundle,
    load_config,
    run_experiment,
    run_sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("kicksim")


def _default_out(name: str) -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "kicksim-out")) / name


def _add_overrides(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_DIR_ENV}/<name>)")
    p.add_argument("--regime")
    p.add_argument("--steps", type=int)
    p.add_argument("--k", type=float, help="kick strength K")
    p.add_argument("--t", type=float, help="kick period T")
    p.add_argument("--meas-period", type=int, help="measure every s kicks")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--realizations", type=int)
    p.add_argument("--ensemble-size", type=int)
    p.add_argument("--n-min", type=int)
    p.add_argument("--n-max", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--method", choices=("direct", "fft"))


def _config_from_args(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    over = {
        "seed": args.seed,
        "regime": args.regime,
        "steps": args.steps,
        "K": args.k,
        "T": args.t,
        "meas_period": args.meas_period,
        "trajectories": args.trajectories,
        "realizations": args.realizations,
        "ensemble_size": args.ensemble_size,
        "n_min": args.n_min,
        "n_max": args.n_max,
        "stride": args.stride,
        "method": args.method,
    }
    over = {k: v for k, v in over.items() if v is not None}
    return config.with_overrides(**over) if over else config


def cmd_run(args) -> int:
    config = _config_from_args(args)
    out = Path(args.out) if args.out else (
        Path(config.output) if config.output else _default_out(f"{config.regime.value}-seed{config.seed}")
    )
    bundle = run_experiment(config, out)
    s = bundle.summary
    print(f"wrote {out}")
    print(f"B_est = {s.get('B_est')}  (K^2/4T = {s['B_theory']})")
    bt = s.get("break_time")
    if bt:
        if bt["suppressed"]:
            print(f"t* = {bt['t_star']}  slope ratio = {bt['slope_ratio']:.4g}")
        else:
            print("no suppression detected")
    return EXIT_OK


def cmd_sweep(args) -> int:
    try:
        data = json.loads(Path(args.plan).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"plan: cannot read {args.plan} ({exc})") from exc
    plan = SweepPlan.from_dict(data)
    if args.workers:
        plan = SweepPlan(plan.base, plan.grid, args.workers)
    out = Path(args.out) if args.out else _default_out("sweep")
    print(f"sweep of {plan.size} cells -> {out}")
    result = run_sweep(plan, out)
    for f in result.failures:
        print(f"cell {f['cell']} {f['params']} failed: {f['error']}", file=sys.stderr)
    return EXIT_OK if result.ok else EXIT_PARTIAL


def cmd_compare(args) -> int:
    report = compare_regimes(load_bundle(d) for d in args.bundles)
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        atomic_write(out / "comparison.json", text)
        atomic_write(out / "comparison.csv", comparison_to_csv(report))
        print(f"wrote {out}")
    else:
        print(json.dumps({k: report[k] for k in ("K", "T", "reference", "ratios", "late_ratios", "diagnostics")},
                         indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    config = load_config(args.config)
    print(f"ok: regime={config.regime.value} K={config.system.kick_strength} "
          f"T={config.system.period} steps={config.steps}")
    return EXIT_OK


def cmd_bessel(args) -> int:
    kernel = build_kick_kernel(args.k, args.tail_tol)
    p = stochastic_row(kernel)
    m = kernel.orders
    info = {
        "K": kernel.K,
        "half_width": kernel.half_width,
        "tail_bound": kernel.tail_bound,
        "norm_error": math.fsum(p) - 1.0,
        "second_moment": math.fsum(m * m * p),
        "second_moment_error": math.fsum(m * m * p) - kernel.K**2 / 2,
        "moment_tol": kernel.moment_tol,
    }
    if args.values:
        info["values"] = {int(k): float(v) for k, v in zip(m, kernel.values)}
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kicksim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"kicksim {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("--config", help="JSON experiment config")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("--plan", required=True, help="JSON sweep plan")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="compare result bundles")
    p.add_argument("bundles", nargs="+", help="run output directories")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("config")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bessel-check", help="print kick-kernel diagnostics")
    p.add_argument("--k", type=float, required=True)
    p.add_argument("--tail-tol", type=float, default=DEFAULT_TAIL_TOL)
    p.add_argument("--values", action="store_true", help="include J_m(K) values")
    p.set_defaults(func=cmd_bessel)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except KicksimError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
