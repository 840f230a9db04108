"""Processor topologies and the ladders of legal configurations a job may step along."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass


class GridError(ValueError):
    pass


class NoLegalConfig(GridError):
    pass


class AtMaximum(GridError):
    pass


class AtMinimum(GridError):
    pass


class Topology(str, enum.Enum):
    GRID2D = "grid2d"
    LINEAR1D = "linear1d"


class Direction(str, enum.Enum):
    EXPAND = "expand"
    SHRINK = "shrink"


@dataclass(frozen=True, order=True)
class ProcGrid:
    """An ``rows x cols`` processor grid; 1-D process sets are stored as ``1 x n``."""

    rows: int
    cols: int
    kind: Topology = Topology.GRID2D

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise GridError(f"grid dimensions must be positive, got {self.rows}x{self.cols}")
        if self.kind is Topology.LINEAR1D and self.rows != 1:
            raise GridError("a linear process set must have exactly one row")

    @classmethod
    def linear(cls, n: int) -> ProcGrid:
        return cls(1, n, Topology.LINEAR1D)

    @classmethod
    def parse(cls, text: str) -> ProcGrid:
        """Parse ``"RxC"`` as a 2-D grid or a bare ``"P"`` as a linear set."""
        m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", text)
        if m:
            return cls(int(m.group(1)), int(m.group(2)))
        m = re.fullmatch(r"\s*(\d+)\s*", text)
        if m:
            return cls.linear(int(m.group(1)))
        raise GridError(f"malformed grid spec {text!r}; expected RxC or P")

    @property
    def total(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def canonical(self) -> ProcGrid:
        if self.rows <= self.cols:
            return self
        return ProcGrid(self.cols, self.rows, self.kind)

    def __str__(self):
        if self.kind is Topology.LINEAR1D:
            return str(self.cols)
        return f"{self.rows}x{self.cols}"


@dataclass(frozen=True)
class ConfigLadder:
    """Ordered configurations a job may run on, strictly increasing in total."""

    problem_size: int
    max_procs: int
    configs: tuple[ProcGrid, ...]

    def __post_init__(self):
        object.__setattr__(self, "configs", tuple(self.configs))
        if not self.configs:
            raise GridError("a ladder needs at least one configuration")
        totals = [g.total for g in self.configs]
        if any(b <= a for a, b in zip(totals, totals[1:])):
            raise GridError(f"ladder totals must strictly increase, got {totals}")

    def __len__(self):
        return len(self.configs)

    def __iter__(self):
        return iter(self.configs)

    def __contains__(self, grid):
        return grid in self.configs

    def index(self, grid: ProcGrid) -> int:
        try:
            return self.configs.index(grid)
        except ValueError:
            raise GridError(f"{grid} is not on the ladder {self.describe()}") from None

    def by_total(self, total: int) -> ProcGrid:
        for g in self.configs:
            if g.total == total:
                return g
        raise GridError(f"no configuration with {total} processors on the ladder {self.describe()}")

    def divides_evenly(self) -> bool:
        return all(self.problem_size % d == 0 for g in self.configs for d in g.shape)

    def describe(self) -> str:
        return "[" + ", ".join(str(g) for g in self.configs) + "]"


def divisors(n: int) -> list[int]:
    small, large = [], []
    d = 1
    while d * d <= n:
        if n % d == 0:
            small.append(d)
            if d * d != n:
                large.append(n // d)
        d += 1
    return small + large[::-1]


def _next_divisor(n: int, after: int) -> int | None:
    for d in divisors(n):
        if d > after:
            return d
    return None


def grow_grid(g: ProcGrid, problem_size: int, max_procs: int) -> ProcGrid:
    """Add processors to the smaller dimension of ``g`` (columns on a tie).

    The grown dimension moves to the next divisor of ``problem_size`` so data
    stays evenly distributable.
    """
    if g.rows > g.cols:
        raise GridError(f"{g} is not canonical (rows must not exceed cols)")
    if g.kind is Topology.LINEAR1D:
        nxt = _next_divisor(problem_size, g.cols)
        if nxt is None or nxt > max_procs:
            raise AtMaximum(f"cannot grow {g} within {max_procs} processors")
        return ProcGrid.linear(nxt)
    if g.rows < g.cols:
        nxt = _next_divisor(problem_size, g.rows)
        grown = ProcGrid(nxt, g.cols) if nxt is not None else None
    else:
        nxt = _next_divisor(problem_size, g.cols)
        grown = ProcGrid(g.rows, nxt) if nxt is not None else None
    if grown is None or grown.total > max_procs:
        raise AtMaximum(f"cannot grow {g} within {max_procs} processors")
    return grown.canonical()


def enumerate_configs(
    problem_size: int,
    max_procs: int,
    kind: Topology = Topology.GRID2D,
    min_procs: int = 2,
    multiple_of: int = 1,
) -> ConfigLadder:
    """Build the ladder of legal configurations for ``problem_size``.

    Linear sets take every divisor of ``problem_size`` in ``[min_procs, max_procs]``
    that is a multiple of ``multiple_of``. Grids start from the smallest, most
    square legal grid holding at least ``min_procs`` processors and grow with
    :func:`grow_grid` until the next grid would exceed ``max_procs``.
    """
    if problem_size < 1:
        raise GridError("problem_size must be positive")
    if not 1 <= min_procs <= max_procs:
        raise GridError(f"need 1 <= min_procs <= max_procs, got {min_procs}, {max_procs}")
    if multiple_of < 1:
        raise GridError("multiple_of must be positive")
    kind = Topology(kind)
    divs = divisors(problem_size)

    if kind is Topology.LINEAR1D:
        counts = [d for d in divs if min_procs <= d <= max_procs and d % multiple_of == 0]
        if not counts:
            raise NoLegalConfig(f"no divisor of {problem_size} in [{min_procs}, {max_procs}]")
        return ConfigLadder(problem_size, max_procs, tuple(ProcGrid.linear(d) for d in counts))

    candidates = [
        ProcGrid(r, c)
        for r in divs
        for c in divs
        if r <= c and min_procs <= r * c <= max_procs
    ]
    if not candidates:
        raise NoLegalConfig(f"no {problem_size}-dividing grid with {min_procs}..{max_procs} processors")
    current = min(candidates, key=lambda g: (g.total, g.cols - g.rows))
    configs = [current]
    while True:
        try:
            current = grow_grid(current, problem_size, max_procs)
        except AtMaximum:
            break
        configs.append(current)
    return ConfigLadder(problem_size, max_procs, tuple(configs))


def next_config(ladder: ConfigLadder, current: ProcGrid, direction: Direction) -> ProcGrid:
    i = ladder.index(current)
    if Direction(direction) is Direction.EXPAND:
        if i + 1 >= len(ladder):
            raise AtMaximum(f"{current} is the largest configuration on the ladder")
        return ladder.configs[i + 1]
    if i == 0:
        raise AtMinimum(f"{current} is the smallest configuration on the ladder")
    return ladder.configs[i - 1]
