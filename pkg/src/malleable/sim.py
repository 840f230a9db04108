"""Deterministic discrete-event replay of resizable jobs on a cluster.

Simulated time advances only by modelled iteration times and redistribution
costs; scheduler exchanges at resize points are instantaneous.
"""

from __future__ import annotations

import enum
import heapq
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Mapping

import numpy as np

from malleable.grid import ConfigLadder, ProcGrid
from malleable.profiler import PerformanceRecord, Profiler
from malleable.redist import BlockCyclicLayout, CostParams, redist_cost, schedule_for
from malleable.scheduler import (
    Action,
    JobRecord,
    NoFeasibleAllocation,
    Outcome,
    Policy,
    ResizeDecision,
    Scheduler,
)


class BadSpec(ValueError):
    pass


class InfeasibleWorkload(ValueError):
    pass


class IncompleteTrace(ValueError):
    pass


# -- application models


class AppKind(str, enum.Enum):
    LU = "lu"
    MM = "mm"
    JACOBI = "jacobi"
    FFT = "fft"
    MASTER_WORKER = "master_worker"
    TABLE = "table"


ANALYTIC_DEFAULTS = {
    AppKind.LU: dict(serial_work=2400.0, comm_coeff=4.0, fixed_overhead=1.0),
    AppKind.MM: dict(serial_work=2000.0, comm_coeff=3.0, fixed_overhead=1.0),
    AppKind.JACOBI: dict(serial_work=1200.0, comm_coeff=2.0, fixed_overhead=0.5),
    AppKind.FFT: dict(serial_work=300.0, comm_coeff=1.5, fixed_overhead=0.5),
}


@dataclass(frozen=True)
class DataDescriptor:
    global_dims: tuple[int, int]
    block_dims: tuple[int, int] = (64, 64)
    element_size: int = 8


@dataclass(frozen=True)
class AppModel:
    kind: AppKind
    times: Callable[[int], float]
    data: DataDescriptor | None
    total_iterations: int
    params: Mapping = field(default_factory=dict)

    def iteration_time(self, config: ProcGrid | int) -> float:
        p = config if isinstance(config, int) else config.total
        t = self.times(p)
        if not t > 0:
            raise BadSpec(f"{self.kind.value} model gives non-positive time {t} at {p} processors")
        return t


class _Table:
    def __init__(self, table: Mapping[int, float]):
        self.table = {int(k): float(v) for k, v in table.items()}

    def __call__(self, p: int) -> float:
        try:
            return self.table[p]
        except KeyError:
            raise BadSpec(f"no tabulated iteration time for {p} processors") from None


def make_app_model(spec: Mapping) -> AppModel:
    """Build an application model from a plain mapping.

    Recognised keys: ``kind``; ``iterations``; ``times`` (table kind, ``{procs: seconds}``);
    ``serial_work``, ``comm_coeff``, ``fixed_overhead`` (analytic kinds);
    ``work_units``, ``unit_time`` (master-worker); ``problem_size``, ``block_dims``,
    ``element_size`` (data layout).
    """
    try:
        kind = AppKind(spec["kind"])
    except (KeyError, ValueError) as exc:
        raise BadSpec(f"unknown or missing application kind: {spec.get('kind')!r}") from exc
    iterations = int(spec.get("iterations", 10))
    if iterations < 1:
        raise BadSpec("iterations must be positive")

    data = None
    if kind is not AppKind.MASTER_WORKER and spec.get("problem_size"):
        n = int(spec["problem_size"])
        block = tuple(int(b) for b in spec.get("block_dims", (64, 64)))
        esize = int(spec.get("element_size", 8))
        if n < 1 or min(block) < 1 or esize < 1:
            raise BadSpec("problem_size, block_dims and element_size must be positive")
        data = DataDescriptor((n, n), block, esize)

    params = dict(spec)
    if kind is AppKind.TABLE:
        table = spec.get("times")
        if not table:
            raise BadSpec("table model needs a non-empty 'times' mapping")
        if any(float(v) <= 0 for v in table.values()) or any(int(k) < 1 for k in table):
            raise BadSpec("tabulated processor counts and times must be positive")
        return AppModel(kind, _Table(table), data, iterations, params)

    if kind is AppKind.MASTER_WORKER:
        units = float(spec.get("work_units", 20000))
        unit_time = float(spec.get("unit_time", 0.001))
        if units <= 0 or unit_time <= 0:
            raise BadSpec("work_units and unit_time must be positive")
        return AppModel(kind, lambda p: units * unit_time / p, None, iterations, params)

    coeffs = {**ANALYTIC_DEFAULTS[kind], **{k: spec[k] for k in ANALYTIC_DEFAULTS[kind] if k in spec}}
    serial, comm, fixed = (float(coeffs[k]) for k in ("serial_work", "comm_coeff", "fixed_overhead"))
    if serial <= 0 or comm < 0 or fixed < 0:
        raise BadSpec("serial_work must be positive; comm_coeff and fixed_overhead non-negative")
    return AppModel(kind, lambda p: serial / p + comm * math.log2(p) + fixed, data, iterations, params)


# -- workload and trace types


@dataclass
class JobSpec:
    job_id: str
    arrival_time: float
    app: AppModel
    ladder: ConfigLadder
    initial_config: ProcGrid
    resizable: bool = True
    fail_after: int | None = None

    @property
    def total_iterations(self) -> int:
        return self.app.total_iterations


class EventKind(enum.IntEnum):
    # value is the tie-break rank at equal timestamps
    JOB_ARRIVAL = 0
    ITERATION_COMPLETE = 1
    RESIZE_COMPLETE = 2
    JOB_END = 3


@dataclass(frozen=True, order=True)
class SimEvent:
    time: float
    kind: EventKind
    sequence: int
    job_id: str = field(compare=False)
    payload: object = field(default=None, compare=False)


@dataclass(frozen=True)
class TraceRow:
    time: float
    job_id: str
    event: str
    rows: int
    cols: int
    total_procs: int
    detail: str = ""

    FIELDS = ("time", "job_id", "event", "rows", "cols", "total_procs", "detail")

    def as_tuple(self):
        return (self.time, self.job_id, self.event, self.rows, self.cols, self.total_procs, self.detail)


@dataclass
class RunMetrics:
    turnaround: dict[str, float]
    arrival: dict[str, float]
    start: dict[str, float]
    end: dict[str, float]
    initial_procs: dict[str, int]
    utilization: float
    makespan: float
    busy_cpu_seconds: float
    timeline: list[tuple[float, str, int, int, int]]
    total_time: float


@dataclass
class SimResult:
    metrics: RunMetrics
    trace: list[TraceRow]
    scheduler: Scheduler
    kernel_busy_cpu_seconds: float


# -- metrics


def compute_metrics(trace: Iterable[TraceRow], cluster_size: int) -> RunMetrics:
    """Turn-around, utilization and allocation timeline from a finished trace.

    Utilization is the share of ``cluster_size x makespan`` cpu-seconds held by
    running jobs, where the makespan runs from the first arrival to the last end.
    """
    rows = list(trace)
    arrival, start, end, initial = {}, {}, {}, {}
    alloc: dict[str, int] = {}
    timeline = []
    busy_area = 0.0
    busy = 0
    last_t = None
    for r in rows:
        if last_t is not None:
            busy_area += busy * (r.time - last_t)
        last_t = r.time
        if r.event == "arrival":
            arrival[r.job_id] = r.time
            initial[r.job_id] = r.rows * r.cols
        elif r.event == "start":
            start[r.job_id] = r.time
        elif r.event == "end":
            end[r.job_id] = r.time
        if r.event in ("start", "decision", "resize", "end"):
            old = alloc.get(r.job_id, 0)
            if r.total_procs != old:
                busy += r.total_procs - old
                alloc[r.job_id] = r.total_procs
                timeline.append((r.time, r.job_id, r.rows, r.cols, r.total_procs))
    missing = sorted(set(arrival) - set(end))
    if not rows or missing:
        raise IncompleteTrace(f"jobs without an end event: {missing}" if missing else "empty trace")
    t0 = min(arrival.values())
    t1 = max(end.values())
    makespan = t1 - t0
    util = 100.0 * busy_area / (cluster_size * makespan) if makespan > 0 else 0.0
    return RunMetrics(
        turnaround={j: end[j] - arrival[j] for j in arrival},
        arrival=arrival,
        start=start,
        end=end,
        initial_procs=initial,
        utilization=util,
        makespan=makespan,
        busy_cpu_seconds=busy_area,
        timeline=timeline,
        total_time=t1,
    )


# -- kernel


@lru_cache(maxsize=1024)
def _resize_cost(src: ProcGrid, dst: ProcGrid, data: DataDescriptor, params: CostParams) -> float:
    layout = BlockCyclicLayout(data.global_dims, data.block_dims, src)
    priced = CostParams(params.latency_per_step, params.bandwidth, data.element_size, params.via_root_multiplier)
    return redist_cost(schedule_for(src, dst), layout, priced)


def resize_cost(app: AppModel, src: ProcGrid, dst: ProcGrid, params: CostParams) -> float:
    if app.data is None or src == dst:
        return 0.0
    return _resize_cost(src, dst, app.data, params)


class Simulation:
    """One replay of a workload; call :meth:`run` once."""

    def __init__(
        self,
        workload: list[JobSpec],
        cluster_size: int,
        policy: Policy = Policy.FCFS,
        resizing: bool = True,
        seed: int = 0,
        cost_params: CostParams = CostParams(),
        jitter: float = 0.0,
        improvement_epsilon: float = 0.0,
        strict: bool = False,
        observer: Callable[[Scheduler, SimEvent], None] | None = None,
    ):
        if not workload:
            raise InfeasibleWorkload("workload has no jobs")
        self.specs = {j.job_id: j for j in workload}
        if len(self.specs) != len(workload):
            raise InfeasibleWorkload("duplicate job ids in workload")
        for j in workload:
            if j.initial_config.total > cluster_size:
                raise InfeasibleWorkload(
                    f"{j.job_id} needs {j.initial_config.total} processors; cluster has {cluster_size}"
                )
            if j.initial_config not in j.ladder:
                raise InfeasibleWorkload(f"{j.job_id}: initial config {j.initial_config} not on its ladder")
        self.cluster_size = cluster_size
        self.resizing = resizing
        self.cost_params = cost_params
        self.jitter = jitter
        self.rng = np.random.default_rng(seed)
        self.observer = observer
        self.profiler = Profiler(improvement_epsilon)
        self.scheduler = Scheduler(cluster_size, policy, self.profiler, strict=strict)
        self.trace: list[TraceRow] = []
        self._events: list[SimEvent] = []
        self._seq = itertools.count()
        self._iter_done: dict[str, int] = {}
        self._iter_started: dict[str, float] = {}
        self._last_redist: dict[str, float] = {}
        self._busy_area = 0.0
        self._last_t = 0.0
        self.now = 0.0

    def _push(self, time: float, kind: EventKind, job_id: str, payload=None) -> None:
        if time < self.now:
            raise RuntimeError("event scheduled in the past")
        heapq.heappush(self._events, SimEvent(time, kind, next(self._seq), job_id, payload))

    def _emit(self, job_id: str, event: str, config: ProcGrid | None, procs: int, detail: str = "") -> None:
        rows, cols = (config.rows, config.cols) if config is not None else (0, 0)
        self.trace.append(TraceRow(self.now, job_id, event, rows, cols, procs, detail))

    def _iteration_time(self, spec: JobSpec, config: ProcGrid) -> float:
        t = spec.app.iteration_time(config)
        if self.jitter:
            t *= 1.0 + self.jitter * float(self.rng.uniform(-1.0, 1.0))
        return t

    def _begin_iteration(self, job_id: str, config: ProcGrid) -> None:
        self._iter_started[job_id] = self.now
        self._push(self.now + self._iteration_time(self.specs[job_id], config), EventKind.ITERATION_COMPLETE, job_id)

    def _started(self, job_ids: list[str]) -> None:
        for job_id in job_ids:
            job = self.scheduler.job(job_id)
            self._emit(job_id, "start", job.config, len(job.allocated))
            self._iter_done[job_id] = 0
            self._last_redist[job_id] = 0.0
            self._begin_iteration(job_id, job.config)

    def _advance(self, t: float) -> None:
        self._busy_area += self.scheduler.busy * (t - self._last_t)
        self._last_t = t
        self.now = t

    def run(self) -> SimResult:
        for spec in sorted(self.specs.values(), key=lambda s: s.arrival_time):
            self._push(spec.arrival_time, EventKind.JOB_ARRIVAL, spec.job_id)
        self._last_t = self.now = min(s.arrival_time for s in self.specs.values())

        while self._events:
            ev = heapq.heappop(self._events)
            self._advance(ev.time)
            handler = {
                EventKind.JOB_ARRIVAL: self._on_arrival,
                EventKind.ITERATION_COMPLETE: self._on_iteration,
                EventKind.RESIZE_COMPLETE: self._on_resize,
                EventKind.JOB_END: self._on_end,
            }[ev.kind]
            handler(ev)
            if self.observer is not None:
                self.observer(self.scheduler, ev)

        stuck = [j.job_id for j in self.scheduler.jobs.values() if j.end_time is None]
        if stuck:
            raise InfeasibleWorkload(f"jobs never completed: {stuck}")
        metrics = compute_metrics(self.trace, self.cluster_size)
        return SimResult(metrics, self.trace, self.scheduler, self._busy_area)

    def _on_arrival(self, ev: SimEvent) -> None:
        spec = self.specs[ev.job_id]
        record = JobRecord(
            job_id=spec.job_id,
            arrival_time=spec.arrival_time,
            ladder=spec.ladder,
            initial_config=spec.initial_config,
            total_iterations=spec.total_iterations,
            resizable=spec.resizable and self.resizing,
            app=spec.app,
        )
        try:
            self.scheduler.submit(record, self.now)
        except NoFeasibleAllocation as exc:
            raise InfeasibleWorkload(str(exc)) from exc
        self._emit(spec.job_id, "arrival", spec.initial_config, 0)
        self._started(self.scheduler.admit(self.now))

    def _on_iteration(self, ev: SimEvent) -> None:
        job_id = ev.job_id
        spec = self.specs[job_id]
        job = self.scheduler.job(job_id)
        done = self._iter_done[job_id] = self._iter_done[job_id] + 1
        elapsed = self.now - self._iter_started[job_id]
        perf = PerformanceRecord(job_id, job.config, elapsed, self._last_redist[job_id], done)
        self._last_redist[job_id] = 0.0
        self._emit(job_id, "iteration", job.config, len(job.allocated), f"index={done} time={elapsed!r}")

        if spec.fail_after is not None and done >= spec.fail_after:
            self._push(self.now, EventKind.JOB_END, job_id, Outcome.FAILED)
            return
        if done >= spec.total_iterations:
            self.profiler.record(perf)
            self._push(self.now, EventKind.JOB_END, job_id, Outcome.FINISHED)
            return
        if not job.resizable:
            self.profiler.record(perf)
            self._begin_iteration(job_id, job.config)
            return
        self.resize_point(job_id, perf)

    def resize_point(self, job_id: str, perf: PerformanceRecord) -> ResizeDecision:
        """Contact the scheduler and carry out what it decides."""
        sched = self.scheduler
        job = sched.job(job_id)
        sched.at_resize_point(job_id, self.now)
        old = job.config
        decision = sched.remap_decision(job_id, perf, self.now)
        entry = sched.decisions[-1]
        target = decision.target or old
        self._emit(job_id, "decision", target, len(job.allocated), entry.detail())
        if decision.action is Action.CONTINUE:
            self._begin_iteration(job_id, old)
            return decision
        cost = resize_cost(job.app, old, decision.target, self.cost_params)
        release = decision.node_list if decision.action is Action.SHRINK else ()
        self._push(self.now + cost, EventKind.RESIZE_COMPLETE, job_id, (decision.target, release, cost))
        return decision

    def _on_resize(self, ev: SimEvent) -> None:
        target, release, cost = ev.payload
        job_id = ev.job_id
        started = self.scheduler.on_resize_complete(job_id, target, release, self.now)
        job = self.scheduler.job(job_id)
        self._last_redist[job_id] = cost
        self._emit(job_id, "resize", target, len(job.allocated), f"redistribution_time={cost!r}")
        self._started(started)
        self._begin_iteration(job_id, target)

    def _on_end(self, ev: SimEvent) -> None:
        outcome: Outcome = ev.payload
        job = self.scheduler.job(ev.job_id)
        config = job.config
        started = self.scheduler.on_job_end(ev.job_id, outcome, self.now)
        self._emit(ev.job_id, "end", config, 0, f"outcome={outcome.value}")
        self._started(started)


def run(
    workload: list[JobSpec],
    cluster_size: int,
    policy: Policy = Policy.FCFS,
    resizing: bool = True,
    seed: int = 0,
    **kwargs,
) -> SimResult:
    return Simulation(workload, cluster_size, policy, resizing, seed, **kwargs).run()
