"""Command line: ``ftmatch run|bench|summarize|ckptfind|trace``."""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import bench
from .ckptfind import MissingLoopBegin, ParseError, analyze, render, write_trace
from .faultinject import FaultPlan
from .recovery import RecoveryPolicy, UnrecoverableFailure
from .simcore import CATEGORIES, CostModel
from .workloads import RunConfig, run
from .workloads.traces import workload_trace


def _add_run(sub):
    p = sub.add_parser("run", help="run one workload under one fault-tolerance design")
    p.add_argument("--workload", choices=["cg", "jacobi"], default="cg")
    p.add_argument("--input", default="desk",
                   help="small|medium|large|desk or explicit dimensions such as 16x16x16")
    p.add_argument("--nranks", type=int, default=8)
    p.add_argument("--iters", type=int)
    p.add_argument("--ckpt-interval", type=int, default=10)
    p.add_argument("--ckpt-level", choices=["L1", "L2", "L3", "L4"], default="L1")
    p.add_argument("--group-size", type=int, default=4)
    p.add_argument("--ft-design", choices=[r.value for r in RecoveryPolicy], default="none")
    p.add_argument("--procfi", action="store_true", help="enable process fault injection")
    p.add_argument("--fi-seed", type=int, default=0)
    p.add_argument("--fi-rank", type=int)
    p.add_argument("--fi-iter", type=int)
    p.add_argument("--fi-count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0, help="scheduler seed")
    p.add_argument("--cost-model", help="JSON file of cost-model overrides")
    p.add_argument("--event-log", help="write the simulation event log here")
    p.add_argument("--json", action="store_true", help="print the result as JSON")
    p.set_defaults(func=cmd_run)


def cmd_run(args):
    plan = None
    if args.procfi:
        plan = FaultPlan(args.fi_seed, args.fi_rank, args.fi_iter, args.fi_count)
    overrides = json.loads(Path(args.cost_model).read_text()) if args.cost_model else {}
    cfg = RunConfig(workload=args.workload, input=args.input, nranks=args.nranks,
                    iters=args.iters, interval=args.ckpt_interval, policy=args.ft_design,
                    level=args.ckpt_level, group_size=args.group_size, seed=args.seed,
                    fault_plan=plan, cost_model=CostModel.from_dict(overrides))
    try:
        rec = run(cfg)
    except UnrecoverableFailure as exc:
        print(f"unrecoverable: {exc}", file=sys.stderr)
        return 3
    if args.event_log:
        Path(args.event_log).write_text("".join(e + "\n" for e in rec.events))
    out = {
        "workload": rec.workload, "policy": rec.policy, "nranks": rec.nranks,
        "input": rec.input, "answer": rec.answer, "digest": rec.digest,
        "iterations_executed": rec.iterations_executed, "checkpoints": rec.checkpoints,
        "repairs": rec.repairs,
        "fault_events": [{"rank": e.rank, "iteration": e.iteration,
                          "virtual_time": float(e.virtual_time)} for e in rec.fault_events],
        "breakdown": {c: float(v) for c, v in rec.breakdown.as_dict().items()},
    }
    out["breakdown"]["total"] = float(max(tb.total for tb in rec.per_rank))
    if args.json:
        print(json.dumps(out, indent=2))
        return 0
    print(f"{rec.workload} {rec.input} on {rec.nranks} ranks, {rec.policy}")
    print(f"answer      {rec.answer!r}")
    print(f"digest      {rec.digest}")
    print(f"iterations  {rec.iterations_executed} executed, {rec.checkpoints} checkpoints, "
          f"{rec.repairs} repairs")
    for e in rec.fault_events:
        print(f"fault       rank {e.rank} at iteration {e.iteration} "
              f"(t={float(e.virtual_time):.1f})")
    for c in list(CATEGORIES) + ["total"]:
        print(f"{c:<11} {out['breakdown'][c]:.1f}")
    return 0


def _add_bench(sub):
    p = sub.add_parser("bench", help="run an experiment sweep")
    p.add_argument("--config", help="JSON experiment config (defaults to the desk sweep)")
    p.add_argument("--out", default="results", help="output directory")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(func=cmd_bench)


def cmd_bench(args):
    cfg = bench.ExperimentConfig.load(args.config) if args.config else bench.ExperimentConfig()
    total = len(cfg.cells())
    done = [0]

    def progress(keys):
        done[0] += 1
        if not args.quiet:
            print(f"[{done[0]}/{total}] {' '.join(keys)}", file=sys.stderr)

    report = bench.run_suite(cfg, args.out, progress)
    print(bench.render_summary(report.findings), end="")
    for name, path in report.paths.items():
        print(f"wrote {name}: {path}")
    return 1 if report.errors else 0


def _add_summarize(sub):
    p = sub.add_parser("summarize", help="findings table from a results.csv")
    p.add_argument("csv")
    p.set_defaults(func=cmd_summarize)


def cmd_summarize(args):
    try:
        findings = bench.summarize(args.csv)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(bench.render_summary(findings), end="")
    return 0


def _ckptfind_args(p):
    p.add_argument("trace", help="trace file, or - for stdin")
    p.add_argument("--format", choices=["text", "tsv"], default="text")
    p.add_argument("-o", "--output", help="write the report here instead of stdout")


def cmd_ckptfind(args):
    try:
        if args.trace == "-":
            cset = analyze(sys.stdin)
        else:
            with open(args.trace) as fh:
                cset = analyze(fh)
    except (ParseError, MissingLoopBegin, OSError) as exc:
        print(f"ckptfind: {exc}", file=sys.stderr)
        return 2
    text = render(cset, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _add_ckptfind(sub):
    p = sub.add_parser("ckptfind", help="find the data objects a trace must checkpoint")
    _ckptfind_args(p)
    p.set_defaults(func=cmd_ckptfind)


def _add_trace(sub):
    p = sub.add_parser("trace", help="emit the serial-analog trace of a workload")
    p.add_argument("--workload", choices=["cg", "jacobi"], default="jacobi")
    p.add_argument("--iters", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_trace)


def cmd_trace(args):
    kw = {"iters": args.iters} if args.iters else {}
    records = workload_trace(args.workload, **kw)
    if args.output:
        with open(args.output, "w") as fh:
            write_trace(records, fh)
    else:
        write_trace(records, sys.stdout)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ftmatch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_bench(sub)
    _add_summarize(sub)
    _add_ckptfind(sub)
    _add_trace(sub)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def ckptfind_main(argv=None):
    p = argparse.ArgumentParser(prog="ckptfind",
                                description="Find the data objects a trace must checkpoint.")
    _ckptfind_args(p)
    return cmd_ckptfind(p.parse_args(argv))


if __name__ == "__main__":
    sys.exit(main())
