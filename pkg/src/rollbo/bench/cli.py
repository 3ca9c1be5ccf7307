"""Benchmark command line: single runs, manifest suites, plot emission."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .functions import get as get_function, names as function_names
from .loop import LoopConfig, run_bo
from .plots import emit_plots
from .suite import (
    parse_manifest,
    run_suite,
    write_results_csv,
    write_timings_csv,
)


def _flag(value: str) -> bool:
    value = value.lower()
    if value in ("on", "true", "1", "yes"):
        return True
    if value in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Benchmark harness for rollout Bayesian optimization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one (function, policy) configuration")
    run.add_argument("--function", required=True, choices=function_names())
    run.add_argument("--policy", required=True,
                     choices=["pi", "ei", "ucb", "rollout"])
    run.add_argument("--horizon", type=int, default=1)
    run.add_argument("--samples", type=int, default=8)
    run.add_argument("--budget", type=int, default=15)
    run.add_argument("--trials", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--qmc", type=_flag, default=True, metavar="on|off")
    run.add_argument("--crn", type=_flag, default=True, metavar="on|off")
    run.add_argument("--cv", type=_flag, default=True, metavar="on|off")
    run.add_argument("--n-init", type=int, default=1)
    run.add_argument("--xi", type=float, default=0.0)
    run.add_argument("--ucb-beta", type=float, default=2.0)
    run.add_argument("--adam-restarts", type=int, default=3)
    run.add_argument("--adam-iters", type=int, default=25)
    run.add_argument("--out", type=Path, required=True, metavar="CSV")

    suite = sub.add_parser("suite", help="run every entry of a manifest file")
    suite.add_argument("--manifest", type=Path, required=True)
    suite.add_argument("--out", type=Path, required=True, metavar="DIR")

    plots = sub.add_parser("plots", help="emit plot scripts from a results CSV")
    plots.add_argument("--in", dest="results", type=Path, required=True,
                       metavar="CSV")
    plots.add_argument("--timings", type=Path, default=None, metavar="CSV")
    plots.add_argument("--out", type=Path, required=True, metavar="DIR")
    return parser


def _cmd_run(args) -> int:
    cfg = LoopConfig(
        n_init=args.n_init,
        xi=args.xi,
        ucb_beta=args.ucb_beta,
        horizon=args.horizon,
        n_samples=args.samples,
        qmc=args.qmc,
        crn=args.crn,
        control_variate=args.cv,
        adam_restarts=args.adam_restarts,
        adam_iters=args.adam_iters,
    )
    fn = get_function(args.function)
    runs = []
    for seed in range(args.seed, args.seed + args.trials):
        runs.append(run_bo(fn, args.policy, seed, args.budget, args.n_init, cfg))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(args.out, runs)
    write_timings_csv(args.out.with_suffix(args.out.suffix + ".timings"), runs)
    failed = [r for r in runs if r.aborted]
    for r in failed:
        print(f"aborted: {r.function}/{r.policy}/seed={r.seed}: {r.abort_reason}",
              file=sys.stderr)
    return 1 if failed else 0


def _cmd_suite(args) -> int:
    specs = parse_manifest(args.manifest.read_text())
    runs = run_suite(specs, args.out)
    failed = sum(r.aborted for r in runs)
    print(f"suite: {len(runs) - failed}/{len(runs)} runs completed -> {args.out}")
    return 0


def _cmd_plots(args) -> int:
    written = emit_plots(args.results, args.out, timings_csv=args.timings)
    for p in written:
        print(f"wrote {p}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "run":
        code = _cmd_run(args)
    elif args.command == "suite":
        code = _cmd_suite(args)
    else:
        code = _cmd_plots(args)
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
