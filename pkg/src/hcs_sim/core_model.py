"""Domain types for hybrid edge/cloud batch scheduling and the replica cost model."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class ValidationError(ValueError):
    """User-supplied input breaks a documented invariant."""


class InternalConsistencyError(RuntimeError):
    """Internal bookkeeping broke an invariant; indicates a bug, aborts the run."""


@dataclass(frozen=True)
class ResourceVector:
    """A CPU/memory quantity. CPU in integer millicores, memory in integer MB."""

    cpu_millicores: int = 0
    memory_mb: int = 0

    def __post_init__(self) -> None:
        if self.cpu_millicores < 0 or self.memory_mb < 0:
            raise ValidationError(f"resource components must be non-negative, got {self}")

    def __add__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu_millicores + other.cpu_millicores,
                              self.memory_mb + other.memory_mb)

    def __sub__(self, other: "ResourceVector") -> "ResourceVector":
        return ResourceVector(self.cpu_millicores - other.cpu_millicores,
                              self.memory_mb - other.memory_mb)

    def scaled(self, count: int) -> "ResourceVector":
        return ResourceVector(self.cpu_millicores * count, self.memory_mb * count)

    def fits_within(self, other: "ResourceVector") -> bool:
        return (self.cpu_millicores <= other.cpu_millicores
                and self.memory_mb <= other.memory_mb)


@dataclass(frozen=True)
class CostParams:
    """Per-unit prices for cloud resources. Edge resources are free."""

    c_cpu: float = 1000.0  # price per whole vCPU per second
    c_mem: float = 0.1     # price per MB per second

    def __post_init__(self) -> None:
        if self.c_cpu < 0 or self.c_mem < 0:
            raise ValidationError("cost parameters must be non-negative")


@dataclass(frozen=True)
class StepSpec:
    """One processing step of a pipeline: a replicated serverless function."""

    step_id: str
    demand_per_replica: ResourceVector
    replicas: int
    service_time_per_fragment: float
    feed_forward: bool = True
    fragment_size_bytes: int = 1_048_576

    def __post_init__(self) -> None:
        if not self.step_id:
            raise ValidationError("step_id must be non-empty")
        if self.replicas < 1:
            raise ValidationError(f"step {self.step_id}: replicas must be >= 1")
        if self.service_time_per_fragment <= 0:
            raise ValidationError(f"step {self.step_id}: service_time_per_fragment must be > 0")
        if self.fragment_size_bytes <= 0:
            raise ValidationError(f"step {self.step_id}: fragment_size_bytes must be > 0")

    @property
    def total_demand(self) -> ResourceVector:
        return self.demand_per_replica.scaled(self.replicas)


@dataclass(frozen=True)
class PipelineDag:
    """Directed graph of steps. Construction is permissive; see dag_violations."""

    steps: tuple[StepSpec, ...]
    edges: tuple[tuple[str, str], ...] = ()

    def __init__(self, steps, edges=()):
        object.__setattr__(self, "steps", tuple(steps))
        object.__setattr__(self, "edges", tuple((a, b) for a, b in edges))

    def step(self, step_id: str) -> StepSpec:
        for s in self.steps:
            if s.step_id == step_id:
                return s
        raise KeyError(step_id)

    def predecessors(self, step_id: str) -> list[str]:
        return [a for a, b in self.edges if b == step_id]

    def successors(self, step_id: str) -> list[str]:
        return [b for a, b in self.edges if a == step_id]

    def source_ids(self) -> list[str]:
        return [s.step_id for s in self.steps if not self.predecessors(s.step_id)]

    def terminal_ids(self) -> list[str]:
        return [s.step_id for s in self.steps if not self.successors(s.step_id)]


def dag_violations(dag: PipelineDag) -> list[str]:
    """Structural checks: unique ids, known edge endpoints, at least one source, acyclic."""
    problems: list[str] = []
    ids = [s.step_id for s in dag.steps]
    if not ids:
        problems.append("pipeline has no steps")
        return problems
    seen: set[str] = set()
    for sid in ids:
        if sid in seen:
            problems.append(f"duplicate step_id {sid!r}")
        seen.add(sid)
    for a, b in dag.edges:
        if a not in seen:
            problems.append(f"edge references unknown step {a!r}")
        if b not in seen:
            problems.append(f"edge references unknown step {b!r}")
        if a == b:
            problems.append(f"self edge on step {a!r}")
    if problems:
        return problems
    if not dag.source_ids():
        problems.append("pipeline has no source step")
    # Kahn's algorithm; leftovers mean a cycle.
    indeg = {sid: 0 for sid in ids}
    for _, b in dag.edges:
        indeg[b] += 1
    queue = [sid for sid in ids if indeg[sid] == 0]
    visited = 0
    while queue:
        sid = queue.pop()
        visited += 1
        for nxt in dag.successors(sid):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    if visited != len(ids):
        problems.append("cycle detected")
    return problems


def topological_order(dag: PipelineDag) -> list[str]:
    """Stable topological order of step ids; raises ValidationError on a cyclic graph."""
    problems = dag_violations(dag)
    if problems:
        raise ValidationError("; ".join(problems))
    order: list[str] = []
    indeg = {s.step_id: len(dag.predecessors(s.step_id)) for s in dag.steps}
    ready = [sid for sid, d in indeg.items() if d == 0]
    while ready:
        sid = ready.pop(0)
        order.append(sid)
        for nxt in dag.successors(sid):
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
    return order


@dataclass(frozen=True)
class BatchJob:
    """A batch of fragments pushed through a pipeline under a completion deadline."""

    job_id: str
    dag: PipelineDag
    fragment_count: int
    deadline: float
    arrival_time: float = 0.0

    def __post_init__(self) -> None:
        if not self.job_id:
            raise ValidationError("job_id must be non-empty")
        if self.fragment_count < 1:
            raise ValidationError(f"job {self.job_id}: fragment_count must be >= 1")
        if self.deadline <= 0:
            raise ValidationError(f"job {self.job_id}: deadline must be > 0")
        if self.arrival_time < 0:
            raise ValidationError(f"job {self.job_id}: arrival_time must be >= 0")


class StepState(Enum):
    PENDING = "pending"
    RUNNING = "running"
    WAITING = "waiting"
    COMPLETED = "completed"


# Legal state-machine moves; anything else is a driver bug.
VALID_STEP_TRANSITIONS: dict[StepState, tuple[StepState, ...]] = {
    StepState.PENDING: (StepState.RUNNING, StepState.WAITING),
    StepState.WAITING: (StepState.RUNNING,),
    StepState.RUNNING: (StepState.COMPLETED,),
    StepState.COMPLETED: (),
}


def assert_step_transition(current: StepState, target: StepState) -> None:
    if target not in VALID_STEP_TRANSITIONS[current]:
        raise InternalConsistencyError(f"illegal step transition {current.value} -> {target.value}")


@dataclass(frozen=True)
class EdgePlacement:
    """Deployment endpoint on the private cluster: replica index -> node id."""

    assignments: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class CloudPlacement:
    """Deployment endpoint on the public cloud."""

    endpoint_label: str


Placement = EdgePlacement | CloudPlacement


def rcost(step: StepSpec, params: CostParams) -> float:
    """Price per second of keeping this step's replica set deployed in the cloud.

    Memory is billed per MB and CPU per whole vCPU, so millicores are scaled
    down by 1000. The result is linear in the replica count.
    """
    per_replica = (step.demand_per_replica.memory_mb * params.c_mem
                   + step.demand_per_replica.cpu_millicores / 1000.0 * params.c_cpu)
    return per_replica * step.replicas


def total_cost(step: StepSpec, params: CostParams, deployed_time: float) -> float:
    """Cloud cost of a deployment held for deployed_time seconds."""
    if deployed_time < 0:
        raise ValidationError("deployed_time must be >= 0")
    return rcost(step, params) * deployed_time


def validate_job(job: BatchJob, execution_timeout: float = 60.0,
                 min_speed_factor: float = 1.0) -> list[str]:
    """Collect every invariant violation in a job spec; empty list means acceptable.

    Args:
        job: candidate job.
        execution_timeout: per-fragment wall-clock limit enforced at admission.
        min_speed_factor: slowest region's speed factor; effective service time
            is service_time / speed, and the slowest region is the binding one.

    Returns:
        Human-readable violations; callers decide whether to raise.
    """
    problems = [f"job {job.job_id}: {p}" for p in dag_violations(job.dag)]
    if min_speed_factor <= 0:
        raise ValidationError("min_speed_factor must be > 0")
    for s in job.dag.steps:
        effective = s.service_time_per_fragment / min_speed_factor
        if effective > execution_timeout:
            problems.append(
                f"job {job.job_id} step {s.step_id}: effective service time "
                f"{effective:g}s exceeds the execution timeout {execution_timeout:g}s")
    return problems
