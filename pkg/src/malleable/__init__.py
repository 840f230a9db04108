"""Malleable-job scheduling with block-cyclic data redistribution.

The package is split into:

* :mod:`malleable.grid` -- processor topologies and configuration ladders
* :mod:`malleable.redist` -- block-cyclic layouts, contention-free schedules, cost model
* :mod:`malleable.profiler` -- per-job performance history and shrink points
* :mod:`malleable.scheduler` -- job queue, lifecycle and expand/shrink policy
* :mod:`malleable.sim` -- discrete-event kernel, application models, metrics
* :mod:`malleable.workload` -- workload file format
* :mod:`malleable.cli` -- command-line entry point
"""

from malleable.grid import ConfigLadder, ProcGrid, Topology, enumerate_configs, grow_grid, next_config
from malleable.redist import (
    BlockCyclicLayout,
    CostParams,
    RedistSchedule,
    execute,
    redist_cost,
    schedule_1d,
    schedule_2d,
    schedule_via_root,
)

__version__ = "0.1.0"

__all__ = [
    "BlockCyclicLayout",
    "ConfigLadder",
    "CostParams",
    "ProcGrid",
    "RedistSchedule",
    "Topology",
    "enumerate_configs",
    "execute",
    "grow_grid",
    "next_config",
    "redist_cost",
    "schedule_1d",
    "schedule_2d",
    "schedule_via_root",
]
