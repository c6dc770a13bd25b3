"""Command-line front end: ``hyc check``, ``hyc simulate`` and ``hyc bench``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .automaton import ModelError
from .expr import ExprError
from .modelfile import BUNDLED, ModelFileError, load, load_bundled
from .ode import DivergenceError, IntegratorConfig
from .report import bench_document, bench_row, bench_table, write_csv, write_report
from .sampler import SamplerConfig, sample_traces
from .solver import SolverConfig
from .strategy import STRATEGIES, StrategyConfig, run_concolic

EXIT_PASS, EXIT_ERROR, EXIT_COUNTEREXAMPLE, EXIT_INCONCLUSIVE = 0, 1, 2, 3
VERDICT_EXIT = {"pass": EXIT_PASS, "counterexample": EXIT_COUNTEREXAMPLE, "timeout-inconclusive": EXIT_INCONCLUSIVE}
SUITES = {"paper-small": BUNDLED}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as "counterexample found"
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _seed(value):
    if value is None:
        value = os.environ.get("HYC_SEED", "0")
    try:
        seed = int(value)
    except ValueError:
        raise UsageError(f"seed must be a non-negative integer, got {value!r}") from None
    if not 0 <= seed < 2**64:
        raise UsageError(f"seed must be a non-negative 64-bit integer, got {seed}")
    return seed


def _sampling_flags(p, samples_help):
    p.add_argument("--samples", type=int, metavar="N", help=samples_help)
    p.add_argument("--steps", type=int, metavar="K", help="unit steps per trace (default: the model's steps)")
    p.add_argument("--points", type=int, default=64, metavar="J", help="time points per window estimate (default 64)")
    p.add_argument("--seed", type=int, default=None, metavar="S", help="run seed (default: $HYC_SEED or 0)")
    p.add_argument("--ode-step", type=float, default=1e-3, metavar="H", help="RK4 step, 1/H must be an integer")
    p.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes for random sampling")


def _strategy_flags(p, default_timeout):
    p.add_argument("--strategy", choices=STRATEGIES, default="local")
    p.add_argument("--timeout", type=float, default=default_timeout, metavar="SECONDS")
    p.add_argument("--batch", type=int, default=16, metavar="N", help="random traces between decisions")
    p.add_argument("--delta", type=float, default=0.01, help="error-probability bound for the confidence")
    p.add_argument("--confidence-target", type=float, default=0.99, metavar="C")
    p.add_argument("--solver-precision", type=float, default=1e-3, metavar="D")
    p.add_argument("--solver-budget", type=float, default=10.0, metavar="SECONDS", help="wall-clock cap per query")
    p.add_argument("--solver-probes", type=int, default=2000, metavar="N", help="path evaluations per query")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hyc", description="Concolic falsification of hybrid automata.")
    parser.add_argument("--version", action="version", version=f"hyc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    check = sub.add_parser("check", help="search for a trace that reaches a negative mode")
    check.add_argument("model", help=f"model file, or a bundled name ({', '.join(BUNDLED)})")
    _sampling_flags(check, "trace budget (default: enough for the confidence target)")
    _strategy_flags(check, 300.0)
    check.add_argument("--out", metavar="PATH", help="write the JSON report here")

    sim = sub.add_parser("simulate", help="dump random traces as CSV on the integrator grid")
    sim.add_argument("model")
    _sampling_flags(sim, "number of traces (default 1)")
    sim.add_argument("--out", metavar="PATH", help="CSV file (default: standard output)")

    bench = sub.add_parser("bench", help="run a model suite under every strategy")
    bench.add_argument("suite", choices=sorted(SUITES))
    bench.add_argument("--models", nargs="+", metavar="NAME", help="restrict to these models of the suite")
    bench.add_argument("--strategies", nargs="+", choices=STRATEGIES, default=list(STRATEGIES))
    _sampling_flags(bench, "trace budget per run (default: enough for the confidence target)")
    _strategy_flags(bench, 300.0)
    bench.add_argument("--out", metavar="PATH", help="write the JSON table here")
    return parser


def _configs(args, h):
    if args.samples is not None and args.samples < 0:
        raise UsageError("--samples must be >= 0")
    try:
        integ = IntegratorConfig(h=args.ode_step)
        scfg = SamplerConfig(J=args.points, K=args.steps, seed=_seed(args.seed), integrator=integ)
        if not hasattr(args, "strategy"):
            return scfg, None, None
        vcfg = SolverConfig(precision=args.solver_precision, budget=args.solver_budget,
                            max_probes=args.solver_probes, integrator=integ)
        cfg = StrategyConfig(mode=args.strategy, timeout=args.timeout, batch=args.batch, max_traces=args.samples,
                             delta=args.delta, target=args.confidence_target, jobs=args.jobs)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return scfg, vcfg, cfg


def _summary(report) -> str:
    lines = [f"{report.model}: {report.verdict} ({report.strategy}, seed {report.seed})",
             f"  traces {report.traces} (random {report.random_traces}, solver {report.solver_traces}), "
             f"solver calls {report.solver_calls}"]
    if report.confidence is not None:
        c = report.confidence
        lines.append(f"  confidence {c.confidence:.6f} that the error probability is below {c.delta} (target {c.target})")
    if report.counterexample is not None:
        lines.append("  counterexample modes: " + " -> ".join(report.counterexample.modes))
    return "\n".join(lines)


def cmd_check(args) -> int:
    h = load(args.model)
    scfg, vcfg, cfg = _configs(args, h)
    report = run_concolic(h, scfg, vcfg, cfg)
    if args.out:
        write_report(report, args.out)
    print(_summary(report))
    return VERDICT_EXIT[report.verdict]


def cmd_simulate(args) -> int:
    h = load(args.model)
    scfg, _, _ = _configs(args, h)
    n = 1 if args.samples is None else args.samples
    traces = sample_traces(h, scfg, 0, n)
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(h, traces, fh, scfg.integrator)
    else:
        write_csv(h, traces, sys.stdout, scfg.integrator)
    return EXIT_PASS


def cmd_bench(args) -> int:
    names = SUITES[args.suite]
    if args.models:
        unknown = sorted(set(args.models) - set(names))
        if unknown:
            raise UsageError(f"not in suite {args.suite}: {', '.join(unknown)}")
        names = [m for m in names if m in args.models]
    rows = []
    for name in names:
        h = load_bundled(name)
        for mode in args.strategies:
            args.strategy = mode
            scfg, vcfg, cfg = _configs(args, h)
            rows.append(bench_row(run_concolic(h, scfg, vcfg, cfg)))
            print(f"  {name} / {mode}: {rows[-1]['result']}", file=sys.stderr, flush=True)
    print(bench_table(rows), end="")
    if args.out:
        Path(args.out).write_text(json.dumps(bench_document(args.suite, _seed(args.seed), rows), indent=2) + "\n")
    return EXIT_PASS


COMMANDS = {"check": cmd_check, "simulate": cmd_simulate, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"hyc: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ModelFileError, ModelError, ExprError) as exc:
        print(f"hyc: model error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except DivergenceError as exc:
        print(f"hyc: integration diverged: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except BrokenPipeError:
        # the reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_ERROR
    except OSError as exc:
        print(f"hyc: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
