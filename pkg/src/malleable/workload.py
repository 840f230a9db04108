"""Workload files: cluster settings plus one ``[[jobs]]`` table per job, in TOML."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from malleable.grid import GridError, ProcGrid, Topology, enumerate_configs, ConfigLadder
from malleable.redist import CostParams, RedistError
from malleable.scheduler import Policy
from malleable.sim import BadSpec, JobSpec, make_app_model

_APP_KEYS = ("kind", "times", "serial_work", "comm_coeff", "fixed_overhead", "work_units", "unit_time")


class WorkloadError(ValueError):
    pass


@dataclass
class JobEntry:
    job_id: str
    arrival_time: float
    kind: str
    initial_config: str
    iterations: int = 10
    problem_size: int = 0
    block_dims: tuple[int, int] = (64, 64)
    element_size: int = 8
    topology: str = "grid2d"
    min_procs: int = 2
    max_procs: int | None = None
    multiple_of: int = 1
    ladder: list[str] | None = None
    resizable: bool = True
    fail_after: int | None = None
    params: dict[str, Any] = field(default_factory=dict)

    def build_ladder(self, cluster_size: int) -> ConfigLadder:
        kind = Topology(self.topology)
        if self.ladder:
            configs = tuple(_grid(s, kind) for s in self.ladder)
            return ConfigLadder(self.problem_size, configs[-1].total, configs)
        cap = min(self.max_procs or cluster_size, cluster_size)
        return enumerate_configs(self.problem_size, cap, kind, self.min_procs, self.multiple_of)

    def to_spec(self, cluster_size: int) -> JobSpec:
        app_spec = {"kind": self.kind, "iterations": self.iterations, **self.params}
        if self.problem_size:
            app_spec.update(problem_size=self.problem_size, block_dims=self.block_dims, element_size=self.element_size)
        app = make_app_model(app_spec)
        ladder = self.build_ladder(cluster_size)
        return JobSpec(
            job_id=self.job_id,
            arrival_time=self.arrival_time,
            app=app,
            ladder=ladder,
            initial_config=_grid(self.initial_config, Topology(self.topology)),
            resizable=self.resizable,
            fail_after=self.fail_after,
        )


def _grid(text: str, kind: Topology) -> ProcGrid:
    g = ProcGrid.parse(str(text))
    if kind is Topology.LINEAR1D and g.kind is not Topology.LINEAR1D:
        raise WorkloadError(f"linear job given a 2-D grid {text!r}")
    if kind is Topology.GRID2D and g.kind is not Topology.GRID2D:
        g = ProcGrid(1, g.cols)
    return g


@dataclass
class WorkloadFile:
    cluster_size: int
    jobs: list[JobEntry]
    policy: str = "fcfs"
    resizing: bool = True
    cost_params: CostParams = field(default_factory=CostParams)

    def job_specs(self) -> list[JobSpec]:
        try:
            return [j.to_spec(self.cluster_size) for j in self.jobs]
        except (GridError, BadSpec, RedistError) as exc:
            raise WorkloadError(str(exc)) from exc

    def to_dict(self) -> dict:
        jobs = []
        for j in self.jobs:
            d = {k: v for k, v in asdict(j).items() if v is not None and k != "params"}
            d["block_dims"] = list(j.block_dims)
            d.update(j.params)
            if "times" in d:
                d["times"] = {str(k): float(v) for k, v in d["times"].items()}
            jobs.append(d)
        return {
            "cluster_size": self.cluster_size,
            "policy": self.policy,
            "resizing": self.resizing,
            "cost_params": asdict(self.cost_params),
            "jobs": jobs,
        }

    def dumps(self) -> str:
        return tomli_w.dumps(self.to_dict())


def parse_workload(data: dict) -> WorkloadFile:
    try:
        cluster_size = int(data["cluster_size"])
    except (KeyError, TypeError, ValueError):
        raise WorkloadError("cluster_size is required and must be an integer") from None
    if cluster_size < 1:
        raise WorkloadError("cluster_size must be positive")
    policy = str(data.get("policy", "fcfs")).lower()
    try:
        Policy(policy)
    except ValueError:
        raise WorkloadError(f"unknown policy {policy!r}") from None
    resizing = data.get("resizing", True)
    if isinstance(resizing, str):
        resizing = resizing.lower() in ("on", "true", "yes")
    try:
        cost = CostParams(**data.get("cost_params", {}))
    except (TypeError, RedistError) as exc:
        raise WorkloadError(f"bad cost_params: {exc}") from None

    raw_jobs = data.get("jobs") or []
    if not raw_jobs:
        raise WorkloadError("workload has no jobs")
    jobs = []
    seen = set()
    for n, raw in enumerate(raw_jobs):
        raw = dict(raw)
        try:
            params = {k: raw.pop(k) for k in _APP_KEYS[1:] if k in raw}
            entry = JobEntry(
                job_id=str(raw.pop("job_id")),
                arrival_time=float(raw.pop("arrival_time")),
                kind=str(raw.pop("kind")),
                initial_config=str(raw.pop("initial_config")),
                params=params,
                **{k: raw.pop(k) for k in list(raw) if k in JobEntry.__dataclass_fields__},
            )
        except KeyError as exc:
            raise WorkloadError(f"job #{n} is missing {exc.args[0]!r}") from None
        except TypeError as exc:
            raise WorkloadError(f"job #{n}: {exc}") from None
        if raw:
            raise WorkloadError(f"job {entry.job_id!r} has unknown keys {sorted(raw)}")
        entry.block_dims = tuple(int(b) for b in entry.block_dims)
        if entry.job_id in seen:
            raise WorkloadError(f"duplicate job_id {entry.job_id!r}")
        if entry.arrival_time < 0:
            raise WorkloadError(f"job {entry.job_id!r} has a negative arrival time")
        if entry.ladder is not None:
            entry.ladder = [str(s) for s in entry.ladder]
        seen.add(entry.job_id)
        jobs.append(entry)
    wf = WorkloadFile(cluster_size, jobs, policy, bool(resizing), cost)
    wf.job_specs()  # validate ladders and models eagerly
    return wf


def loads(text: str) -> WorkloadFile:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise WorkloadError(f"not valid TOML: {exc}") from None
    return parse_workload(data)


def load(path: str | Path) -> WorkloadFile:
    return loads(Path(path).read_text())


def fixture(name: str) -> WorkloadFile:
    """Load a bundled workload, e.g. ``fixture("w1")``."""
    return loads(resources.files("malleable.fixtures").joinpath(f"{name}.toml").read_text())
