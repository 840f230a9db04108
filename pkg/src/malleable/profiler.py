"""Per-job performance history: iteration timings, shrink points and sweet-spot status."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from malleable.grid import ProcGrid


class UnknownJob(KeyError):
    pass


@dataclass(frozen=True)
class PerformanceRecord:
    job_id: str
    config: ProcGrid
    iteration_time: float
    redistribution_time: float = 0.0
    iteration_index: int = 0

    def __post_init__(self):
        if self.iteration_time <= 0:
            raise ValueError("iteration_time must be positive")
        if self.redistribution_time < 0:
            raise ValueError("redistribution_time must be non-negative")


@dataclass(frozen=True)
class ShrinkPoint:
    job_id: str
    config: ProcGrid
    relinquishable: int
    expected_degradation: float


class SweetSpotStatus(str, enum.Enum):
    PROBING = "probing"
    AT_SWEET_SPOT = "at_sweet_spot"


@dataclass(frozen=True)
class SweetSpotState:
    status: SweetSpotStatus = SweetSpotStatus.PROBING
    sweet_config: ProcGrid | None = None


@dataclass
class _JobHistory:
    records: list[PerformanceRecord] = field(default_factory=list)
    best: dict[ProcGrid, float] = field(default_factory=dict)
    sweet: SweetSpotState = field(default_factory=SweetSpotState)


class Profiler:
    """Keeps every resize-point report and derives the facts the remap policy needs.

    ``improvement_epsilon`` is the iteration-time reduction (seconds) an expansion
    must beat to count as an improvement.
    """

    def __init__(self, improvement_epsilon: float = 0.0):
        self.improvement_epsilon = improvement_epsilon
        self._jobs: dict[str, _JobHistory] = {}

    def register(self, job_id: str) -> None:
        self._jobs.setdefault(job_id, _JobHistory())

    def _get(self, job_id: str) -> _JobHistory:
        try:
            return self._jobs[job_id]
        except KeyError:
            raise UnknownJob(job_id) from None

    def history(self, job_id: str) -> tuple[PerformanceRecord, ...]:
        return tuple(self._get(job_id).records)

    def best_time(self, job_id: str, config: ProcGrid) -> float:
        return self._get(job_id).best[config]

    def visited(self, job_id: str) -> list[ProcGrid]:
        return sorted(self._get(job_id).best, key=lambda g: g.total)

    def record(self, rec: PerformanceRecord) -> None:
        h = self._get(rec.job_id)
        h.records.append(rec)
        prev = h.best.get(rec.config)
        h.best[rec.config] = rec.iteration_time if prev is None else min(prev, rec.iteration_time)
        if h.sweet.status is SweetSpotStatus.PROBING:
            found = _detect_sweet_spot(h.records, self.improvement_epsilon)
            if found is not None:
                h.sweet = SweetSpotState(SweetSpotStatus.AT_SWEET_SPOT, found)

    def last_expansion(self, job_id: str) -> tuple[PerformanceRecord, PerformanceRecord] | None:
        """The (before, after) records around the most recent growth in processor count."""
        recs = self._get(job_id).records
        for k in range(len(recs) - 1, 0, -1):
            if recs[k].config.total > recs[k - 1].config.total:
                return recs[k - 1], recs[k]
        return None

    def expansion_improved(self, job_id: str) -> bool:
        pair = self.last_expansion(job_id)
        if pair is None:
            return True
        before, after = pair
        return before.iteration_time - after.iteration_time > self.improvement_epsilon

    def just_expanded_without_gain(self, job_id: str) -> bool:
        """True when the latest record is the first one after an expansion that did not help."""
        recs = self._get(job_id).records
        if len(recs) < 2:
            return False
        before, after = recs[-2], recs[-1]
        if after.config.total <= before.config.total:
            return False
        return before.iteration_time - after.iteration_time <= self.improvement_epsilon

    def shrink_points(self, job_id: str, current: ProcGrid | None = None) -> list[ShrinkPoint]:
        h = self._get(job_id)
        if current is None:
            if not h.records:
                return []
            current = h.records[-1].config
        cur_best = h.best.get(current)
        points = []
        for cfg in self.visited(job_id):
            if cfg.total >= current.total:
                continue
            degradation = 0.0 if cur_best is None else max(0.0, h.best[cfg] - cur_best)
            points.append(ShrinkPoint(job_id, cfg, current.total - cfg.total, degradation))
        return points

    def sweet_spot(self, job_id: str) -> SweetSpotState:
        return self._get(job_id).sweet

    def reset_sweet_spot(self, job_id: str) -> None:
        self._get(job_id).sweet = SweetSpotState()


def _detect_sweet_spot(records: list[PerformanceRecord], eps: float) -> ProcGrid | None:
    # pattern: ... C | D (bigger, no gain over C) ... | C again
    if len(records) < 3:
        return None
    last = records[-1]
    k = len(records) - 2
    while k >= 0 and records[k].config.total > last.config.total:
        k -= 1
    if k < 0 or k == len(records) - 2 or records[k].config != last.config:
        return None
    grown = records[k + 1]
    if records[k].iteration_time - grown.iteration_time <= eps:
        return last.config
    return None
