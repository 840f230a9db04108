"""Block-cyclic redistribution between processor grids.

A block ``(i, j)`` of a block-cyclic array on an ``r x c`` grid lives on processor
``(i mod r, j mod c)``.  Moving from a ``p``-way to a ``q``-way distribution along
one dimension, the communication pattern repeats every ``lcm(p, q)`` blocks, so
each residue ``k`` modulo the lcm is one message class from ``k mod p`` to
``k mod q``.  The classes form a bipartite graph between senders and receivers;
a proper edge colouring of that graph is a contention-free schedule, one colour
per step.  Checkerboard schedules are the cross product of a row and a column
schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterator

import numpy as np

from malleable.grid import ProcGrid

Proc = tuple[int, int]
Block = tuple[int, int]


class RedistError(ValueError):
    pass


class OutOfRange(RedistError):
    pass


class ScheduleMismatch(RedistError):
    pass


@dataclass(frozen=True)
class BlockCyclicLayout:
    global_dims: tuple[int, int]
    block_dims: tuple[int, int]
    grid: ProcGrid

    def __post_init__(self):
        if min(self.global_dims) < 1 or min(self.block_dims) < 1:
            raise RedistError("global and block dimensions must be positive")

    @property
    def block_grid(self) -> tuple[int, int]:
        return (
            math.ceil(self.global_dims[0] / self.block_dims[0]),
            math.ceil(self.global_dims[1] / self.block_dims[1]),
        )

    def owner(self, block: Block) -> Proc:
        return block_owner(block, self)

    def procs(self) -> list[Proc]:
        return [(i, j) for i in range(self.grid.rows) for j in range(self.grid.cols)]

    def block_slices(self, block: Block) -> tuple[slice, slice]:
        (i, j), (br, bc) = block, self.block_dims
        return (
            slice(i * br, min((i + 1) * br, self.global_dims[0])),
            slice(j * bc, min((j + 1) * bc, self.global_dims[1])),
        )

    def owned_blocks(self, proc: Proc) -> list[Block]:
        nbr, nbc = self.block_grid
        return [(i, j) for i in range(proc[0], nbr, self.grid.rows) for j in range(proc[1], nbc, self.grid.cols)]

    def compatible(self, other: BlockCyclicLayout) -> bool:
        return self.global_dims == other.global_dims and self.block_dims == other.block_dims


def block_owner(block: Block, layout: BlockCyclicLayout) -> Proc:
    i, j = block
    nbr, nbc = layout.block_grid
    if not (0 <= i < nbr and 0 <= j < nbc):
        raise OutOfRange(f"block {block} outside the {nbr}x{nbc} block grid")
    return (i % layout.grid.rows, j % layout.grid.cols)


@dataclass(frozen=True)
class BlockClass:
    """Blocks ``(i, j)`` with ``i = row_res (mod row_mod)`` and ``j = col_res (mod col_mod)``."""

    row_res: int
    row_mod: int
    col_res: int
    col_mod: int

    def blocks(self, block_grid: tuple[int, int]) -> Iterator[Block]:
        nbr, nbc = block_grid
        for i in range(self.row_res, nbr, self.row_mod):
            for j in range(self.col_res, nbc, self.col_mod):
                yield (i, j)

    def count(self, block_grid: tuple[int, int]) -> int:
        nbr, nbc = block_grid
        return _residue_count(nbr, self.row_res, self.row_mod) * _residue_count(nbc, self.col_res, self.col_mod)

    def elements(self, layout: BlockCyclicLayout) -> int:
        rows = _residue_extent(layout.global_dims[0], layout.block_dims[0], self.row_res, self.row_mod)
        cols = _residue_extent(layout.global_dims[1], layout.block_dims[1], self.col_res, self.col_mod)
        return rows * cols


def _residue_count(n: int, res: int, mod: int) -> int:
    return 0 if res >= n else (n - 1 - res) // mod + 1


@lru_cache(maxsize=4096)
def _residue_extent(length: int, block: int, res: int, mod: int) -> int:
    """Number of element indices whose block index is ``res`` modulo ``mod``."""
    nblocks = math.ceil(length / block)
    total = 0
    for b in range(res, nblocks, mod):
        total += min(block, length - b * block)
    return total


@dataclass(frozen=True)
class Transfer:
    src: Proc
    dst: Proc
    blocks: BlockClass


@dataclass(frozen=True)
class RedistSchedule:
    """Ordered communication steps; transfers within a step run concurrently."""

    src: ProcGrid
    dst: ProcGrid
    steps: tuple[tuple[Transfer, ...], ...]
    via_root: bool = False

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(tuple(s) for s in self.steps))

    def __len__(self):
        return len(self.steps)

    @property
    def is_empty(self) -> bool:
        return not self.steps

    def transfers(self) -> Iterator[Transfer]:
        for step in self.steps:
            yield from step

    def blocks_shipped(self, block_grid: tuple[int, int]) -> int:
        return sum(t.blocks.count(block_grid) for t in self.transfers())

    def elements_shipped(self, layout: BlockCyclicLayout) -> int:
        return sum(t.blocks.elements(layout) for t in self.transfers())

    def table(self) -> str:
        """Destination processor table: one row per step, one column per source."""
        sources = [(i, j) for i in range(self.src.rows) for j in range(self.src.cols)]
        label = _label_for(self.src)
        dlabel = _label_for(self.dst)
        header = ["step"] + [label(p) for p in sources]
        rows = [header]
        for n, step in enumerate(self.steps):
            dest = {t.src: dlabel(t.dst) for t in step}
            rows.append([str(n)] + [dest.get(p, "-") for p in sources])
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)


def _label_for(grid: ProcGrid):
    if grid.rows == 1:
        return lambda p: str(p[1])
    return lambda p: f"{p[0]},{p[1]}"


def _color_bipartite(edges: list[tuple[int, int, int]]) -> list[list[tuple[int, int, int]]]:
    """Colour ``(key, left, right)`` edges of a bipartite graph with max-degree colours.

    Uses alternating-path recolouring (Konig's theorem), so the colour count equals
    the maximum vertex degree.
    """
    if not edges:
        return []
    deg_l: dict[int, int] = {}
    deg_r: dict[int, int] = {}
    for _, u, v in edges:
        deg_l[u] = deg_l.get(u, 0) + 1
        deg_r[v] = deg_r.get(v, 0) + 1
    ncolors = max(max(deg_l.values()), max(deg_r.values()))
    at_l: dict[int, dict[int, tuple[int, int]]] = {u: {} for u in deg_l}  # colour -> (right, key)
    at_r: dict[int, dict[int, tuple[int, int]]] = {v: {} for v in deg_r}  # colour -> (left, key)

    def free(table, c_range=range(ncolors)):
        return next(c for c in c_range if c not in table)

    for key, u, v in edges:
        a = free(at_l[u])
        b = free(at_r[v])
        if a not in at_r[v]:
            at_l[u][a] = (v, key)
            at_r[v][a] = (u, key)
            continue
        # walk the a/b alternating path from v and swap its colours, freeing a at v
        path = []
        side, node, colour = "r", v, a
        while True:
            table = at_r[node] if side == "r" else at_l[node]
            if colour not in table:
                break
            other, k = table[colour]
            if side == "r":
                path.append((other, node, k, colour))
                side, node = "l", other
            else:
                path.append((node, other, k, colour))
                side, node = "r", other
            colour = b if colour == a else a
        for pu, pv, _, c in path:
            del at_l[pu][c]
            del at_r[pv][c]
        for pu, pv, k, c in path:
            nc = b if c == a else a
            at_l[pu][nc] = (pv, k)
            at_r[pv][nc] = (pu, k)
        at_l[u][a] = (v, key)
        at_r[v][a] = (u, key)

    steps: list[list[tuple[int, int, int]]] = [[] for _ in range(ncolors)]
    for u, table in at_l.items():
        for c, (v, key) in table.items():
            steps[c].append((key, u, v))
    return [sorted(s, key=lambda e: e[1]) for s in steps if s]


def _classes(p: int, q: int, include_local: bool) -> list[tuple[int, int, int]]:
    lcm = math.lcm(p, q)
    return [(k, k % p, k % q) for k in range(lcm) if include_local or k % p != k % q]


def schedule_1d(p: int, q: int) -> RedistSchedule:
    """Contention-free schedule for a ``p``-way to ``q``-way 1-D block-cyclic remap.

    Local classes (same processor index on both sides) stay in place and are not
    scheduled.
    """
    if p < 1 or q < 1:
        raise RedistError("processor counts must be positive")
    lcm = math.lcm(p, q)
    steps = [
        tuple(Transfer((0, u), (0, v), BlockClass(0, 1, k, lcm)) for k, u, v in step)
        for step in _color_bipartite(_classes(p, q, include_local=False))
    ]
    return RedistSchedule(ProcGrid.linear(p), ProcGrid.linear(q), tuple(steps))


def schedule_2d(src: ProcGrid, dst: ProcGrid) -> RedistSchedule:
    """Checkerboard schedule: cross product of the row and column 1-D schedules."""
    row_steps = _color_bipartite(_classes(src.rows, dst.rows, include_local=True))
    col_steps = _color_bipartite(_classes(src.cols, dst.cols, include_local=True))
    lr, lc = math.lcm(src.rows, dst.rows), math.lcm(src.cols, dst.cols)
    steps = []
    for rstep in row_steps:
        for cstep in col_steps:
            step = tuple(
                Transfer((i, j), (i2, j2), BlockClass(kr, lr, kc, lc))
                for kr, i, i2 in rstep
                for kc, j, j2 in cstep
                if (i, j) != (i2, j2)
            )
            if step:
                steps.append(step)
    return RedistSchedule(src, dst, tuple(steps))


def schedule_via_root(src: ProcGrid, dst: ProcGrid) -> RedistSchedule:
    """Checkpoint-style baseline: gather everything on ``(0, 0)``, then scatter."""
    root = (0, 0)
    steps = []
    for i in range(src.rows):
        for j in range(src.cols):
            if (i, j) != root:
                steps.append((Transfer((i, j), root, BlockClass(i, src.rows, j, src.cols)),))
    for i in range(dst.rows):
        for j in range(dst.cols):
            if (i, j) != root:
                steps.append((Transfer(root, (i, j), BlockClass(i, dst.rows, j, dst.cols)),))
    return RedistSchedule(src, dst, tuple(steps), via_root=True)


def schedule_for(src: ProcGrid, dst: ProcGrid) -> RedistSchedule:
    if src.rows == 1 and dst.rows == 1:
        s = schedule_1d(src.cols, dst.cols)
        return RedistSchedule(src, dst, s.steps)
    return schedule_2d(src, dst)


@dataclass
class TransferStats:
    step_bytes: list[int] = field(default_factory=list)
    total_bytes: int = 0
    total_elements: int = 0


def scatter(array: np.ndarray, layout: BlockCyclicLayout) -> dict[Proc, dict[Block, np.ndarray]]:
    """Split a global array into per-processor block stores."""
    if tuple(array.shape) != tuple(layout.global_dims):
        raise RedistError(f"array shape {array.shape} does not match layout {layout.global_dims}")
    stores: dict[Proc, dict[Block, np.ndarray]] = {p: {} for p in layout.procs()}
    nbr, nbc = layout.block_grid
    for i in range(nbr):
        for j in range(nbc):
            stores[layout.owner((i, j))][(i, j)] = array[layout.block_slices((i, j))].copy()
    return stores


def gather(stores: dict[Proc, dict[Block, np.ndarray]], layout: BlockCyclicLayout, dtype=None) -> np.ndarray:
    first = next((b for s in stores.values() for b in s.values()), None)
    dtype = dtype or (first.dtype if first is not None else float)
    out = np.empty(layout.global_dims, dtype=dtype)
    seen = 0
    for store in stores.values():
        for block, data in store.items():
            out[layout.block_slices(block)] = data
            seen += 1
    if seen != layout.block_grid[0] * layout.block_grid[1]:
        raise RedistError(f"expected {layout.block_grid[0] * layout.block_grid[1]} blocks, found {seen}")
    return out


def execute_stores(
    stores: dict[Proc, dict[Block, np.ndarray]],
    src_layout: BlockCyclicLayout,
    dst_layout: BlockCyclicLayout,
    schedule: RedistSchedule,
) -> tuple[dict[Proc, dict[Block, np.ndarray]], TransferStats]:
    """Run ``schedule`` over existing per-processor stores (consumed, not copied)."""
    if not src_layout.compatible(dst_layout):
        raise ScheduleMismatch("source and destination layouts differ in global or block dims")
    if schedule.src.shape != src_layout.grid.shape or schedule.dst.shape != dst_layout.grid.shape:
        raise ScheduleMismatch(
            f"schedule {schedule.src}->{schedule.dst} does not match layouts "
            f"{src_layout.grid}->{dst_layout.grid}"
        )
    bgrid = src_layout.block_grid
    holdings = {p: dict(s) for p, s in stores.items()}
    stats = TransferStats()
    for n, step in enumerate(schedule.steps):
        in_flight = []
        step_max = 0
        for t in step:
            have = holdings.get(t.src, {})
            payload = {}
            for b in t.blocks.blocks(bgrid):
                if b not in have:
                    raise RedistError(f"step {n}: {t.src} does not hold block {b} for {t.dst}")
                payload[b] = have.pop(b)
            nbytes = sum(d.nbytes for d in payload.values())
            stats.total_elements += sum(d.size for d in payload.values())
            stats.total_bytes += nbytes
            step_max = max(step_max, nbytes)
            in_flight.append((t.dst, payload))
        for dst, payload in in_flight:
            holdings.setdefault(dst, {}).update(payload)
        stats.step_bytes.append(step_max)

    dst_procs = set(dst_layout.procs())
    for p, held in holdings.items():
        if p not in dst_procs and held:
            raise RedistError(f"processor {p} leaves the grid still holding {len(held)} blocks")
    return {p: holdings.get(p, {}) for p in dst_layout.procs()}, stats


def execute(
    array: np.ndarray,
    src_layout: BlockCyclicLayout,
    dst_layout: BlockCyclicLayout,
    schedule: RedistSchedule,
) -> tuple[dict[Proc, dict[Block, np.ndarray]], TransferStats]:
    """Distribute ``array`` under ``src_layout`` and remap it with ``schedule``."""
    return execute_stores(scatter(array, src_layout), src_layout, dst_layout, schedule)


@dataclass(frozen=True)
class CostParams:
    latency_per_step: float = 5e-4
    bandwidth: float = 1.25e8
    element_size: int = 8
    via_root_multiplier: float = 2.0

    def __post_init__(self):
        if min(self.latency_per_step, self.bandwidth, self.element_size) <= 0:
            raise RedistError("cost parameters must be strictly positive")
        if self.via_root_multiplier < 1:
            raise RedistError("via_root_multiplier must be at least 1")


def redist_cost(schedule: RedistSchedule, layout: BlockCyclicLayout, params: CostParams = CostParams()) -> float:
    """Seconds to run ``schedule`` with steps priced strictly in sequence.

    Each step costs one latency plus its largest transfer over the bandwidth.
    """
    total = 0.0
    for step in schedule.steps:
        largest = max((t.blocks.elements(layout) for t in step), default=0)
        total += params.latency_per_step + largest * params.element_size / params.bandwidth
    if schedule.via_root:
        total *= params.via_root_multiplier
    return total
