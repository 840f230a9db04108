"""Job queue, lifecycle state machine and the expand/shrink remap policy."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

from malleable.grid import AtMaximum, ConfigLadder, Direction, ProcGrid, next_config
from malleable.profiler import PerformanceRecord, Profiler, SweetSpotStatus


class SchedulerError(RuntimeError):
    pass


class UnknownJob(SchedulerError, KeyError):
    pass


class DuplicateJob(SchedulerError):
    pass


class NoFeasibleAllocation(SchedulerError):
    pass


class NotAtResizePoint(SchedulerError):
    pass


class IllegalTransition(SchedulerError):
    pass


class InvariantViolation(AssertionError):
    pass


class JobState(str, enum.Enum):
    QUEUED = "queued"
    STARTING = "starting"
    RUNNING = "running"
    AT_RESIZE_POINT = "at_resize_point"
    REDISTRIBUTING = "redistributing"
    FINISHED = "finished"
    FAILED = "failed"


TRANSITIONS: dict[JobState, frozenset[JobState]] = {
    JobState.QUEUED: frozenset({JobState.STARTING}),
    JobState.STARTING: frozenset({JobState.RUNNING}),
    JobState.RUNNING: frozenset({JobState.AT_RESIZE_POINT, JobState.FINISHED, JobState.FAILED}),
    JobState.AT_RESIZE_POINT: frozenset({JobState.RUNNING, JobState.REDISTRIBUTING}),
    JobState.REDISTRIBUTING: frozenset({JobState.RUNNING, JobState.FAILED}),
    JobState.FINISHED: frozenset(),
    JobState.FAILED: frozenset(),
}


class Policy(str, enum.Enum):
    FCFS = "fcfs"
    BACKFILL = "backfill"


class Action(str, enum.Enum):
    EXPAND = "expand"
    SHRINK = "shrink"
    CONTINUE = "continue"


class Outcome(str, enum.Enum):
    FINISHED = "finished"
    FAILED = "failed"


@dataclass
class JobRecord:
    job_id: str
    arrival_time: float
    ladder: ConfigLadder
    initial_config: ProcGrid
    total_iterations: int
    resizable: bool = True
    app: Any = None
    state: JobState = JobState.QUEUED
    config: ProcGrid | None = None
    allocated: list[int] = field(default_factory=list)
    pending: ProcGrid | None = None
    start_time: float | None = None
    end_time: float | None = None

    @property
    def turnaround(self) -> float | None:
        if self.end_time is None:
            return None
        return self.end_time - self.arrival_time


@dataclass(frozen=True)
class ResizeDecision:
    action: Action
    target: ProcGrid | None = None
    node_list: tuple[int, ...] | None = None
    reason: str = ""

    def __post_init__(self):
        if (self.target is None) != (self.action is Action.CONTINUE):
            raise ValueError("a target is required exactly when the action is not continue")


@dataclass(frozen=True)
class DecisionLogEntry:
    time: float
    job_id: str
    current: ProcGrid
    decision: ResizeDecision
    idle: int
    queued: int
    head_demand: int
    pending_release: int
    improved: bool
    sweet: ProcGrid | None

    def detail(self) -> str:
        d = self.decision
        parts = [
            f"action={d.action.value}",
            f"reason={d.reason}",
            f"from={self.current}",
            f"to={d.target if d.target is not None else self.current}",
            f"idle={self.idle}",
            f"queued={self.queued}",
            f"head_demand={self.head_demand}",
            f"pending_release={self.pending_release}",
            f"improved={int(self.improved)}",
            f"sweet={self.sweet if self.sweet is not None else '-'}",
        ]
        return " ".join(parts)


class Scheduler:
    """Resource manager for a homogeneous cluster of ``cluster_size`` nodes.

    All state changes go through the methods here; the simulator drives them
    from its event loop.  With ``strict`` set, every mutation re-checks the
    allocation invariants and raises :class:`InvariantViolation` on a breach.
    """

    def __init__(
        self,
        cluster_size: int,
        policy: Policy = Policy.FCFS,
        profiler: Profiler | None = None,
        strict: bool = False,
    ):
        if cluster_size < 1:
            raise ValueError("cluster_size must be positive")
        self.cluster_size = cluster_size
        self.policy = Policy(policy)
        self.profiler = profiler or Profiler()
        self.strict = strict
        self.jobs: dict[str, JobRecord] = {}
        self.queue: list[str] = []
        self.idle: set[int] = set(range(cluster_size))
        self.transitions: list[tuple[float, str, JobState, JobState]] = []
        self.decisions: list[DecisionLogEntry] = []
        self.now = 0.0

    # -- bookkeeping

    def job(self, job_id: str) -> JobRecord:
        try:
            return self.jobs[job_id]
        except KeyError:
            raise UnknownJob(job_id) from None

    def _move(self, job: JobRecord, new: JobState) -> None:
        if new not in TRANSITIONS[job.state]:
            raise IllegalTransition(f"{job.job_id}: {job.state.value} -> {new.value}")
        self.transitions.append((self.now, job.job_id, job.state, new))
        job.state = new

    def _take_idle(self, n: int) -> list[int]:
        nodes = sorted(self.idle)[:n]
        self.idle.difference_update(nodes)
        return nodes

    @property
    def busy(self) -> int:
        return self.cluster_size - len(self.idle)

    def pending_release(self) -> int:
        total = 0
        for j in self.jobs.values():
            if j.state is JobState.REDISTRIBUTING and j.pending.total < j.config.total:
                total += j.config.total - j.pending.total
        return total

    def running(self) -> list[JobRecord]:
        live = (JobState.RUNNING, JobState.AT_RESIZE_POINT, JobState.REDISTRIBUTING)
        return [j for j in self.jobs.values() if j.state in live]

    def audit(self) -> None:
        """Check capacity, disjointness and allocation sizes."""
        seen: set[int] = set()
        for j in self.running():
            nodes = set(j.allocated)
            if len(nodes) != len(j.allocated):
                raise InvariantViolation(f"{j.job_id} holds a node twice")
            if nodes & seen:
                raise InvariantViolation(f"{j.job_id} shares nodes {sorted(nodes & seen)}")
            if nodes & self.idle:
                raise InvariantViolation(f"{j.job_id} holds idle nodes {sorted(nodes & self.idle)}")
            seen |= nodes
            want = j.config.total
            if j.state is JobState.REDISTRIBUTING:
                want = max(want, j.pending.total)
            if len(nodes) != want:
                raise InvariantViolation(f"{j.job_id} holds {len(nodes)} nodes, expected {want}")
        if len(seen) + len(self.idle) != self.cluster_size:
            raise InvariantViolation("nodes lost or duplicated between jobs and idle pool")

    def _check(self) -> None:
        if self.strict:
            self.audit()

    # -- submission and admission

    def submit(self, job: JobRecord, now: float) -> int:
        self.now = now
        if job.job_id in self.jobs:
            raise DuplicateJob(job.job_id)
        if job.initial_config not in job.ladder:
            raise NoFeasibleAllocation(f"{job.job_id}: initial config {job.initial_config} is not on its ladder")
        if job.initial_config.total > self.cluster_size:
            raise NoFeasibleAllocation(
                f"{job.job_id} needs {job.initial_config.total} nodes; cluster has {self.cluster_size}"
            )
        job.state = JobState.QUEUED
        self.jobs[job.job_id] = job
        self.queue.append(job.job_id)
        self.profiler.register(job.job_id)
        return len(self.queue) - 1

    def _start(self, job: JobRecord) -> None:
        self.queue.remove(job.job_id)
        self._move(job, JobState.STARTING)
        job.allocated = self._take_idle(job.initial_config.total)
        job.config = job.initial_config
        job.start_time = self.now
        self._move(job, JobState.RUNNING)

    def admit(self, now: float, policy: Policy | None = None) -> list[str]:
        """Start queued jobs that fit; FCFS stops at the first misfit, backfill skips it."""
        self.now = now
        policy = Policy(policy or self.policy)
        started = []
        while self.queue:
            head = self.jobs[self.queue[0]]
            if head.initial_config.total > len(self.idle):
                break
            self._start(head)
            started.append(head.job_id)
        if policy is Policy.BACKFILL:
            for job_id in list(self.queue[1:]):
                job = self.jobs[job_id]
                if job.initial_config.total <= len(self.idle):
                    self._start(job)
                    started.append(job_id)
        self._check()
        return started

    # -- resize points

    def at_resize_point(self, job_id: str, now: float) -> None:
        self.now = now
        self._move(self.job(job_id), JobState.AT_RESIZE_POINT)

    def remap_decision(self, job_id: str, perf: PerformanceRecord, now: float) -> ResizeDecision:
        """Decide whether ``job_id`` expands, shrinks or continues at this resize point.

        ``perf`` is handed to the profiler before deciding.
        """
        self.now = now
        job = self.job(job_id)
        if job.state is not JobState.AT_RESIZE_POINT:
            raise NotAtResizePoint(f"{job_id} is {job.state.value}")
        prof = self.profiler
        prof.record(perf)
        cur = job.config

        head_demand = self.jobs[self.queue[0]].initial_config.total if self.queue else 0
        pending = self.pending_release()
        improved = prof.expansion_improved(job_id)
        sweet_state = prof.sweet_spot(job_id)
        sweet = sweet_state.sweet_config if sweet_state.status is SweetSpotStatus.AT_SWEET_SPOT else None

        decision = self._decide(job, head_demand, pending, improved, sweet)

        self.decisions.append(
            DecisionLogEntry(now, job_id, cur, decision, len(self.idle), len(self.queue),
                             head_demand, pending, improved, sweet)
        )
        if decision.action is Action.CONTINUE:
            self._move(job, JobState.RUNNING)
        else:
            self._move(job, JobState.REDISTRIBUTING)
            job.pending = decision.target
            if decision.action is Action.EXPAND:
                if self.strict and (self.queue or len(decision.node_list) > len(self.idle)):
                    raise InvariantViolation(f"{job_id} expanded with a non-empty queue or too few idle nodes")
                self.idle.difference_update(decision.node_list)
                job.allocated.extend(decision.node_list)
        self._check()
        return decision

    def _decide(self, job: JobRecord, head_demand, pending, improved, sweet) -> ResizeDecision:
        cur = job.config
        if not job.resizable:
            return ResizeDecision(Action.CONTINUE, reason="static")
        prof = self.profiler
        if prof.just_expanded_without_gain(job.job_id):
            target = prof.history(job.job_id)[-2].config
            return self._shrink(job, target, "no_gain")

        if self.queue:
            need = head_demand - len(self.idle) - pending
            if need <= 0:
                return ResizeDecision(Action.CONTINUE, reason="release_pending")
            points = prof.shrink_points(job.job_id, cur)
            if not points:
                return ResizeDecision(Action.CONTINUE, reason="queued_no_shrink_point")
            enough = [p for p in points if p.relinquishable >= need]
            if enough:
                target = max(enough, key=lambda p: p.config.total).config
                return self._shrink(job, target, "queue")
            return self._shrink(job, points[0].config, "queue_insufficient")

        if self.idle:
            try:
                nxt = next_config(job.ladder, cur, Direction.EXPAND)
            except AtMaximum:
                return ResizeDecision(Action.CONTINUE, reason="at_maximum")
            extra = nxt.total - cur.total
            if extra > len(self.idle):
                return ResizeDecision(Action.CONTINUE, reason="too_few_idle")
            if sweet is not None:
                if nxt.total > sweet.total:
                    return ResizeDecision(Action.CONTINUE, reason="at_sweet_spot")
            elif not improved:
                return ResizeDecision(Action.CONTINUE, reason="no_improvement")
            nodes = tuple(sorted(self.idle)[:extra])
            return ResizeDecision(Action.EXPAND, nxt, nodes, reason="idle")
        return ResizeDecision(Action.CONTINUE, reason="no_idle")

    def _shrink(self, job: JobRecord, target: ProcGrid, reason: str) -> ResizeDecision:
        release = tuple(job.allocated[target.total:])
        return ResizeDecision(Action.SHRINK, target, release, reason=reason)

    def on_resize_complete(
        self, job_id: str, new_config: ProcGrid, relinquished: tuple[int, ...] | set[int] = (), now: float | None = None
    ) -> list[str]:
        if now is not None:
            self.now = now
        job = self.job(job_id)
        if job.state is not JobState.REDISTRIBUTING:
            raise SchedulerError(f"{job_id} is not redistributing")
        gone = set(relinquished)
        if not gone <= set(job.allocated):
            raise SchedulerError(f"{job_id} cannot release nodes it does not hold")
        job.allocated = [n for n in job.allocated if n not in gone]
        self.idle |= gone
        job.config = new_config
        job.pending = None
        self._move(job, JobState.RUNNING)
        self._check()
        return self.admit(self.now)

    def on_job_end(self, job_id: str, outcome: Outcome, now: float) -> list[str]:
        self.now = now
        job = self.job(job_id)
        if job.state not in (JobState.RUNNING, JobState.REDISTRIBUTING):
            raise SchedulerError(f"{job_id} cannot end from {job.state.value}")
        self._move(job, JobState.FINISHED if Outcome(outcome) is Outcome.FINISHED else JobState.FAILED)
        self.idle.update(job.allocated)
        job.allocated = []
        job.pending = None
        job.end_time = now
        self._check()
        return self.admit(now)
