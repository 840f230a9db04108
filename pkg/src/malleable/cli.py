"""Command-line interface: ``malleable run | schedule | verify | metrics``.

Exit codes: 0 success, 1 bad input, 2 infeasible workload, 3 property violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
from pathlib import Path

from malleable.grid import GridError, ProcGrid
from malleable.redist import BlockCyclicLayout, CostParams, redist_cost, schedule_1d, schedule_2d, schedule_via_root
from malleable.scheduler import Policy
from malleable.sim import InfeasibleWorkload, IncompleteTrace, RunMetrics, SimResult, TraceRow, compute_metrics, run
from malleable.verify import run_all
from malleable.workload import WorkloadError, load

log = logging.getLogger("malleable")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- trace and metrics files


def write_trace(rows: list[TraceRow], path_or_stream) -> None:
    own = isinstance(path_or_stream, (str, Path))
    fh = open(path_or_stream, "w", newline="") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TraceRow.FIELDS)
        for r in rows:
            w.writerow((repr(r.time), r.job_id, r.event, r.rows, r.cols, r.total_procs, r.detail))
    finally:
        if own:
            fh.close()


def read_trace(path) -> list[TraceRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TraceRow.FIELDS:
            raise UsageError(f"{path}: unexpected trace header {reader.fieldnames}")
        return [
            TraceRow(float(r["time"]), r["job_id"], r["event"], int(r["rows"]), int(r["cols"]),
                     int(r["total_procs"]), r["detail"])
            for r in reader
        ]


def format_metrics(m: RunMetrics, label: str = "") -> str:
    out = io.StringIO()
    if label:
        out.write(f"# {label}\n")
    out.write("job\tinitial_procs\tarrival\tstart\tend\tturnaround\n")
    for job in m.arrival:
        out.write(
            f"{job}\t{m.initial_procs[job]}\t{m.arrival[job]:.2f}\t{m.start.get(job, math.nan):.2f}"
            f"\t{m.end[job]:.2f}\t{m.turnaround[job]:.2f}\n"
        )
    out.write(f"utilization_percent\t{m.utilization:.2f}\n")
    out.write(f"makespan\t{m.makespan:.2f}\n")
    out.write(f"busy_cpu_seconds\t{m.busy_cpu_seconds:.2f}\n")
    return out.getvalue()


def format_comparison(static: RunMetrics, dynamic: RunMetrics) -> str:
    out = io.StringIO()
    out.write("job\tinitial_procs\tstatic_turnaround\tdynamic_turnaround\tdifference\n")
    for job in static.arrival:
        s, d = static.turnaround[job], dynamic.turnaround[job]
        out.write(f"{job}\t{static.initial_procs[job]}\t{s:.2f}\t{d:.2f}\t{s - d:.2f}\n")
    out.write(f"utilization_percent\t{static.utilization:.2f}\t{dynamic.utilization:.2f}\n")
    out.write(f"makespan\t{static.makespan:.2f}\t{dynamic.makespan:.2f}\n")
    return out.getvalue()


# -- commands


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "yes", "1"):
        return True
    if text.lower() in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on or off, got {text!r}")


def _simulate(wf, policy, resizing, seed) -> SimResult:
    return run(wf.job_specs(), wf.cluster_size, Policy(policy), resizing, seed, cost_params=wf.cost_params)


def cmd_run(args) -> int:
    wf = load(args.workload)
    policy = args.policy or wf.policy
    resizing = wf.resizing if args.resizing is None else args.resizing
    result = _simulate(wf, policy, resizing, args.seed)
    label = f"workload={Path(args.workload).name} policy={policy} resizing={'on' if resizing else 'off'} " \
            f"cluster_size={wf.cluster_size} seed={args.seed}"
    if args.trace:
        write_trace(result.trace, args.trace)
    text = format_metrics(result.metrics, label)
    if args.compare:
        other = _simulate(wf, policy, not resizing, args.seed)
        static, dynamic = (other, result) if resizing else (result, other)
        text += "\n" + format_comparison(static.metrics, dynamic.metrics)
    if args.metrics:
        Path(args.metrics).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _grid_arg(text: str) -> ProcGrid:
    try:
        return ProcGrid.parse(text)
    except GridError as exc:
        raise UsageError(str(exc)) from None


def cmd_schedule(args) -> int:
    src, dst = _grid_arg(args.src), _grid_arg(args.dst)
    try:
        nbr, nbc = (int(x) for x in args.blocks.lower().split("x")) if args.blocks else (
            math.lcm(src.rows, dst.rows), math.lcm(src.cols, dst.cols))
    except ValueError:
        raise UsageError(f"malformed --blocks {args.blocks!r}; expected NxM") from None
    if nbr < 1 or nbc < 1:
        raise UsageError("--blocks dimensions must be positive")
    if args.via_root:
        sched = schedule_via_root(src, dst)
    elif src.rows == 1 and dst.rows == 1:
        sched = schedule_1d(src.cols, dst.cols)
    else:
        sched = schedule_2d(src, dst)
    params = CostParams()
    block = (64, 64)
    layout = BlockCyclicLayout((nbr * block[0], nbc * block[1]), block, src)
    moving = sched.blocks_shipped((nbr, nbc))
    print(f"schedule {src} -> {dst}{' via root' if args.via_root else ''}, block grid {nbr}x{nbc}")
    if sched.is_empty or moving == 0:
        print("no data movement")
    else:
        print(sched.table())
    print(f"steps: {len(sched)}")
    print(f"moving blocks: {moving}")
    print(f"bytes: {sched.elements_shipped(layout) * params.element_size}")
    print(f"estimated seconds: {redist_cost(sched, layout, params):.6f}")
    return 0


def cmd_verify(args) -> int:
    cases, violations = run_all(args.max_procs, args.max_blocks, corrupt_first=args.corrupt)
    if violations:
        for v in violations[:10]:
            print(f"FAIL {v}", file=sys.stderr)
        return 3
    print(f"all {cases} cases pass")
    return 0


def cmd_metrics(args) -> int:
    rows = read_trace(args.trace)
    sys.stdout.write(format_metrics(compute_metrics(rows, args.cluster_size), args.label or ""))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="malleable", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="replay a workload file")
    r.add_argument("--workload", required=True)
    r.add_argument("--policy", choices=[x.value for x in Policy])
    r.add_argument("--resizing", type=_on_off, metavar="on|off")
    r.add_argument("--trace", help="CSV trace output path")
    r.add_argument("--metrics", help="metrics output path (stdout if omitted)")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--compare", action="store_true", help="also run with resizing flipped and tabulate both")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("schedule", help="print a redistribution schedule")
    s.add_argument("--src", required=True, metavar="RxC|P")
    s.add_argument("--dst", required=True, metavar="RxC|Q")
    s.add_argument("--blocks", metavar="NxM")
    s.add_argument("--via-root", action="store_true", help="show the gather/scatter baseline instead")
    s.set_defaults(func=cmd_schedule)

    v = sub.add_parser("verify", help="exhaustively check schedules")
    v.add_argument("--max-procs", type=int, default=8)
    v.add_argument("--max-blocks", type=int, default=16)
    v.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    m = sub.add_parser("metrics", help="recompute metrics from a trace file")
    m.add_argument("--trace", required=True)
    m.add_argument("--cluster-size", type=int, required=True)
    m.add_argument("--label")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (WorkloadError, UsageError, IncompleteTrace, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except InfeasibleWorkload as exc:
        print(f"infeasible workload: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
