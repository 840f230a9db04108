"""Exhaustive property checks over generated redistribution schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from malleable.grid import ProcGrid
from malleable.redist import RedistSchedule, schedule_1d, schedule_for


@dataclass(frozen=True)
class Violation:
    src: ProcGrid
    dst: ProcGrid
    step: int | None
    kind: str
    message: str

    def __str__(self):
        where = f"step {self.step}" if self.step is not None else "schedule"
        return f"{self.kind}: {self.src} -> {self.dst} at {where}: {self.message}"


def grid_shapes(max_procs: int) -> list[ProcGrid]:
    """Every r x c grid with r*c <= max_procs, including 1 x k and k x 1."""
    return [ProcGrid(r, c) for r in range(1, max_procs + 1) for c in range(1, max_procs // r + 1)]


def contention(schedule: RedistSchedule) -> list[Violation]:
    out = []
    for n, step in enumerate(schedule.steps):
        srcs = [t.src for t in step]
        dsts = [t.dst for t in step]
        if len(set(srcs)) != len(srcs):
            out.append(Violation(schedule.src, schedule.dst, n, "contention", f"repeated sender in {srcs}"))
        if len(set(dsts)) != len(dsts):
            out.append(Violation(schedule.src, schedule.dst, n, "contention", f"repeated receiver in {dsts}"))
    return out


def step_bound_1d(p: int, q: int, schedule: RedistSchedule | None = None) -> list[Violation]:
    schedule = schedule or schedule_1d(p, q)
    lcm = math.lcm(p, q)
    bound = max(lcm // p, lcm // q)
    if len(schedule) > bound:
        return [Violation(schedule.src, schedule.dst, None, "step_bound", f"{len(schedule)} steps > {bound}")]
    return []


def placement(schedule: RedistSchedule, block_grid: tuple[int, int]) -> list[Violation]:
    """Replay ``schedule`` on ownership tokens and compare against block-cyclic owners."""
    src, dst = schedule.src, schedule.dst
    nbr, nbc = block_grid
    bi = np.arange(nbr)[:, None]
    bj = np.arange(nbc)[None, :]
    width = max(src.cols, dst.cols)
    holder = (bi % src.rows) * width + (bj % src.cols)
    want = (bi % dst.rows) * width + (bj % dst.cols)
    out = []
    for n, step in enumerate(schedule.steps):
        writes = []
        for t in step:
            view = (slice(t.blocks.row_res, None, t.blocks.row_mod), slice(t.blocks.col_res, None, t.blocks.col_mod))
            sid = t.src[0] * width + t.src[1]
            if not np.all(holder[view] == sid):
                out.append(Violation(src, dst, n, "placement", f"{t.src} ships blocks it does not hold"))
                return out
            writes.append((view, t.dst[0] * width + t.dst[1]))
        for view, did in writes:
            holder[view] = did
    bad = np.argwhere(holder != want)
    if bad.size:
        i, j = bad[0]
        out.append(Violation(src, dst, None, "placement", f"block ({i}, {j}) misplaced ({len(bad)} total)"))
    return out


def corrupt(schedule: RedistSchedule) -> RedistSchedule:
    """Redirect one transfer onto another's receiver; used to exercise failure reporting."""
    steps = [list(s) for s in schedule.steps]
    for s in steps:
        if len(s) >= 2:
            a, b = s[0], s[1]
            s[1] = type(b)(b.src, a.dst, b.blocks)
            return RedistSchedule(schedule.src, schedule.dst, tuple(tuple(x) for x in steps), schedule.via_root)
    raise ValueError("schedule has no step with two transfers to corrupt")


def block_grids(max_blocks: int) -> Iterator[tuple[int, int]]:
    for n in range(1, max_blocks + 1):
        for m in range(1, max_blocks + 1):
            yield (n, m)


def run_all(max_procs: int = 8, max_blocks: int = 16, corrupt_first: bool = False) -> tuple[int, list[Violation]]:
    """Check placement and contention for every grid pair, and the 1-D step bound.

    Returns the number of cases examined and any violations found.
    """
    cases = 0
    violations: list[Violation] = []
    shapes = grid_shapes(max_procs)
    corrupted = not corrupt_first
    for p in range(1, max_procs + 1):
        for q in range(1, max_procs + 1):
            s = schedule_1d(p, q)
            cases += 1
            violations += contention(s) + step_bound_1d(p, q, s)
    grids = list(block_grids(max_blocks))
    for a in shapes:
        for b in shapes:
            s = schedule_for(a, b)
            if not corrupted:
                try:
                    s = corrupt(s)
                    corrupted = True
                except ValueError:
                    pass
            violations += contention(s)
            for bg in grids:
                cases += 1
                violations += placement(s, bg)
            if violations:
                return cases, violations
    return cases, violations
