"""Command line: ``bench``, ``enumerate``, ``classify``, ``speedup``, ``merge``.

Exit codes: 0 success, 2 usage or parse error, 3 timeout.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import kernels, oracle
from .agent import PIPELINED, SYNCHRONOUS, InternalModelConfig
from .bench import ALL_STRATEGIES, compare_repeats, run_once, write_run
from .runtime import ConfigError
from .strategy import parse_strategy
from .tracing import ClassificationError, TraceFormatError, classify, dump_jsonl, load_jsonl, merge

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_TIMEOUT = 3

OUT_ENV = "BDICONC_OUT"
INTERNAL_MODES = {"sync": SYNCHRONOUS, "pipelined": PIPELINED}


class UsageError(Exception):
    pass


def _config(spec, args, work_ms=5.0):
    from .specfile import resolve

    try:
        config = resolve(spec, work_ms)
    except FileNotFoundError:
        raise UsageError(f"no such spec: {spec}") from None
    except (ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if getattr(args, "seed", None) is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "internal", None):
        config = config.with_internal(
            InternalModelConfig(
                INTERNAL_MODES[args.internal],
                config.internal.max_percepts_per_sense,
                config.internal.max_actions_per_act,
            )
        )
    return config


def _strategy(text):
    try:
        return parse_strategy(text)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_bench(args):
    text = args.strategy_opt or args.strategy
    if not text:
        raise UsageError("bench needs a strategy")
    kind = _strategy(text)
    config = _config(args.spec, args)
    out = args.out or os.environ.get(OUT_ENV) or "runs"
    traces = []
    timed_out = False
    for i in range(args.repeat):
        report, trace = run_once(config, kind, args.timeout)
        write_run(out, i, report, trace)
        traces.append(trace)
        print(report.summary())
        timed_out |= not report.quiesced
    if args.repeat > 1 and kind.single_flow:
        same, diff = compare_repeats(traces)
        print(f"{same}/{len(traces)} logically identical")
        if diff is not None:
            print(f"first divergence: {diff}")
    print(f"traces written to {out}")
    return EXIT_TIMEOUT if timed_out else EXIT_OK


def cmd_enumerate(args):
    try:
        term = oracle.parse_term(args.term)
        result = oracle.enumerate_discipline(term, args.discipline, args.n, args.depth)
    except oracle.TermError as exc:
        raise UsageError(str(exc)) from None
    for s in result.sorted():
        print(",".join(s))
    print(len(result))
    return EXIT_OK


def cmd_classify(args):
    try:
        trace = load_jsonl(args.trace)
        report = classify(trace)
    except OSError as exc:
        raise UsageError(str(exc)) from None
    except (TraceFormatError, ClassificationError) as exc:
        raise UsageError(f"{args.trace}: {exc}") from None
    ev = report.evidence
    print(f"class: {report.label}")
    print(f"compatible: {', '.join(str(c) for c in report.compatible_strategies)}")
    print(
        f"evidence: events={ev['events']} agents={ev['agents']} carriers={ev['carriers']} "
        f"processes={ev['processes']} bijection={ev['bijection']}"
    )
    return EXIT_OK


def cmd_speedup(args):
    if args.agents < 1:
        raise UsageError("--agents must be >= 1")
    spec = args.spec or f"spinner-{args.agents}"
    config = _config(spec, args, args.work)
    strategies = [_strategy(s) for s in (args.strategies or ALL_STRATEGIES)]
    kernels.spin(0.001)
    print(f"kernel backend: {kernels.backend()}  cores: {os.cpu_count()}  spec: {spec}")
    print(f"{'strategy':<18} {'wall ms':>10} {'vs first':>9}  status")
    base = None
    timed_out = False
    for kind in strategies:
        report, _ = run_once(config, kind, args.timeout)
        base = base or report.wall_time
        status = "quiesced" if report.quiesced else "timed-out"
        timed_out |= not report.quiesced
        print(f"{str(kind):<18} {report.wall_time * 1000:10.1f} {report.wall_time / base:9.2f}  {status}")
    return EXIT_TIMEOUT if timed_out else EXIT_OK


def cmd_merge(args):
    try:
        traces = [load_jsonl(p) for p in args.traces]
    except OSError as exc:
        raise UsageError(str(exc)) from None
    except TraceFormatError as exc:
        raise UsageError(str(exc)) from None
    dump_jsonl(merge(*traces), args.output)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="bdiconc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a spec under one strategy")
    b.add_argument("spec", help="pingpong, ring-N, spinner-M or a YAML file")
    b.add_argument("strategy", nargs="?")
    b.add_argument("--strategy", dest="strategy_opt")
    b.add_argument("--seed", type=int)
    b.add_argument("--repeat", type=int, default=1)
    b.add_argument("--internal", choices=sorted(INTERNAL_MODES))
    b.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    b.add_argument("--timeout", type=float)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("enumerate", help="list the interleavings of a process term")
    e.add_argument("term")
    e.add_argument("discipline", choices=oracle.DISCIPLINES)
    e.add_argument("-N", "--n", type=int)
    e.add_argument("--depth", type=int, default=oracle.DEFAULT_DEPTH)
    e.set_defaults(func=cmd_enumerate)

    c = sub.add_parser("classify", help="infer the observable concurrency class of a trace")
    c.add_argument("trace")
    c.set_defaults(func=cmd_classify)

    s = sub.add_parser("speedup", help="compare wall time of strategies on a CPU-bound MAS")
    s.add_argument("spec", nargs="?")
    s.add_argument("--agents", "-M", type=int, default=64)
    s.add_argument("--work", type=float, default=5.0, help="busy-spin per agent, ms")
    s.add_argument("--strategies", nargs="*")
    s.add_argument("--seed", type=int)
    s.add_argument("--internal", choices=sorted(INTERNAL_MODES))
    s.add_argument("--timeout", type=float)
    s.set_defaults(func=cmd_speedup)

    m = sub.add_parser("merge", help="merge per-process traces by (wall_ns, process, seq)")
    m.add_argument("output")
    m.add_argument("traces", nargs="+")
    m.set_defaults(func=cmd_merge)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    if getattr(args, "repeat", 1) < 1:
        parser.error("--repeat must be >= 1")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
