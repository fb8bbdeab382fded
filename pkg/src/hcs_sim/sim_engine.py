"""Deterministic discrete-event core: clock, total event ordering, seeded
Poisson arrival generation, fault injection, and the scheduler/driver
orchestration loop."""

from __future__ import annotations

import dataclasses
import heapq
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from hcs_sim.core_model import (
    BatchJob,
    CloudPlacement,
    CostParams,
    EdgePlacement,
    InternalConsistencyError,
    ResourceVector,
    ValidationError,
    validate_job,
)
from hcs_sim.hcs_scheduler import (
    DEFAULT_EVICTION_DEADLINE,
    DEFAULT_ROUND_LENGTH,
    DeployCloud,
    DeployEdge,
    Evict,
    HcsScheduler,
    ScheduleDecision,
    SchedulerMode,
    cloud_label,
)
from hcs_sim.metrics import JobOutcome, MetricsCollector, RunReport
from hcs_sim.pipeline_driver import Dispatch, PipelineDriver, cloud_pool_size
from hcs_sim.placement import NodeState, PlacementPolicy

log = logging.getLogger(__name__)


class EventKind(IntEnum):
    """Tie-break priority at equal timestamps, lowest first.

    Completions and eviction expirations must be visible before the round
    that schedules over them; arrivals land before the round boundary they
    sit on.
    """

    FRAGMENT_COMPLETE = 0
    EVICTION_EXPIRE = 1
    NODE_FAILURE = 2
    DRIVER_RESTART = 3
    JOB_ARRIVAL = 4
    ROUND_TICK = 5
    SIMULATION_END = 6


@dataclass(frozen=True)
class PoissonArrivals:
    """Exponential inter-arrival times from a seeded generator."""

    rate: float
    seed: int
    count: int


@dataclass(frozen=True)
class ExplicitArrivals:
    """Fixed arrival times; templates cycle through the catalog when unnamed."""

    times: tuple[float, ...]
    templates: tuple[str, ...] | None = None


ArrivalProcess = PoissonArrivals | ExplicitArrivals


@dataclass(frozen=True)
class NodeFailureFault:
    time: float
    node_id: int


@dataclass(frozen=True)
class DriverRestartFault:
    time: float
    job_index: int  # position in the generated arrival schedule


Fault = NodeFailureFault | DriverRestartFault


@dataclass(frozen=True)
class ScheduledArrival:
    time: float
    template: str
    job: BatchJob


@dataclass(frozen=True)
class Scenario:
    """Everything a run depends on; equal scenarios give byte-identical reports."""

    scenario_id: str
    node_capacities: tuple[ResourceVector, ...]
    catalog: dict[str, BatchJob]  # template name -> job template
    arrivals: ArrivalProcess
    cost_params: CostParams = field(default_factory=CostParams)
    mode: SchedulerMode = SchedulerMode.CHEAPEST_FIRST
    placement: PlacementPolicy = PlacementPolicy.FIRST_FIT
    round_length: float = DEFAULT_ROUND_LENGTH
    eviction_deadline: float = DEFAULT_EVICTION_DEADLINE
    edge_speed: float = 0.8
    cloud_speed: float = 1.0
    cloud_concurrency: int | None = None
    execution_timeout: float = 60.0
    horizon: float | None = None
    faults: tuple[Fault, ...] = ()


def generate_arrivals(process: ArrivalProcess,
                      catalog: dict[str, BatchJob]) -> list[ScheduledArrival]:
    """Expand an arrival process into a concrete, deterministic schedule.

    Poisson inter-arrival gaps come from inverse-CDF exponentials over a
    PCG64 stream; the template pick for each arrival consumes the next draw
    from the same stream, so one seed fixes the whole schedule.
    """
    names = list(catalog)
    if isinstance(process, PoissonArrivals):
        if process.rate <= 0:
            raise ValidationError("arrivals.rate must be > 0")
        if process.count < 0:
            raise ValidationError("arrivals.count must be >= 0")
        if not names:
            raise ValidationError("workload catalog must not be empty")
        rng = np.random.Generator(np.random.PCG64(process.seed))
        out: list[ScheduledArrival] = []
        t = 0.0
        for i in range(process.count):
            u = float(rng.random())
            t += -math.log1p(-u) / process.rate
            name = names[int(rng.integers(0, len(names)))]
            job = dataclasses.replace(
                catalog[name], job_id=f"{name}-{i:04d}", arrival_time=t)
            out.append(ScheduledArrival(t, name, job))
        return out

    times = list(process.times)
    if any(t < 0 for t in times):
        raise ValidationError("explicit arrival times must be >= 0")
    if times != sorted(times):
        raise ValidationError("explicit arrival times must be sorted")
    if times and not names:
        raise ValidationError("workload catalog must not be empty")
    if process.templates is not None:
        if len(process.templates) != len(times):
            raise ValidationError("arrivals.templates must match times in length")
        unknown = [t for t in process.templates if t not in catalog]
        if unknown:
            raise ValidationError(f"unknown arrival templates: {unknown}")
    out = []
    for i, t in enumerate(times):
        name = process.templates[i] if process.templates else names[i % len(names)]
        job = dataclasses.replace(
            catalog[name], job_id=f"{name}-{i:04d}", arrival_time=t)
        out.append(ScheduledArrival(t, name, job))
    return out


def inject_faults(scenario: Scenario, faults: list[Fault]) -> Scenario:
    """Return a scenario with extra fault events merged in, after validation."""
    merged = list(scenario.faults) + list(faults)
    seen_nodes: set[int] = set()
    for f in merged:
        if f.time < 0:
            raise ValidationError(f"fault time {f.time} must be >= 0")
        if scenario.horizon is not None and f.time > scenario.horizon:
            raise ValidationError(f"fault at {f.time} is past the horizon {scenario.horizon}")
        if isinstance(f, NodeFailureFault):
            if not 0 <= f.node_id < len(scenario.node_capacities):
                raise ValidationError(f"fault references unknown node {f.node_id}")
            if f.node_id in seen_nodes:
                raise ValidationError(f"node {f.node_id} fails more than once")
            seen_nodes.add(f.node_id)
        elif f.job_index < 0:
            raise ValidationError(f"fault job_index {f.job_index} must be >= 0")
    merged.sort(key=lambda f: f.time)
    return dataclasses.replace(scenario, faults=tuple(merged))


def _validate_scenario(scenario: Scenario) -> None:
    if scenario.edge_speed <= 0 or scenario.cloud_speed <= 0:
        raise ValidationError("region speed factors must be > 0")
    if scenario.horizon is not None and scenario.horizon <= 0:
        raise ValidationError("horizon must be > 0 when set")
    if scenario.mode is SchedulerMode.CLOUD_ONLY:
        min_speed = scenario.cloud_speed
    else:
        min_speed = min(scenario.edge_speed, scenario.cloud_speed)
    problems: list[str] = []
    for name, template in scenario.catalog.items():
        for p in validate_job(template, scenario.execution_timeout, min_speed):
            problems.append(f"template {name}: {p}")
    if problems:
        raise ValidationError("; ".join(problems))
    for f in scenario.faults:
        if isinstance(f, NodeFailureFault):
            if not 0 <= f.node_id < len(scenario.node_capacities):
                raise ValidationError(f"fault references unknown node {f.node_id}")


class _Engine:
    """One run's mutable state; single-threaded, shares nothing."""

    def __init__(self, scenario: Scenario, arrivals: list[ScheduledArrival]):
        self.scenario = scenario
        self.arrivals = arrivals
        self.nodes = [NodeState(i, cap) for i, cap in enumerate(scenario.node_capacities)]
        self.sched = HcsScheduler(
            self.nodes, scenario.cost_params, scenario.placement,
            scenario.round_length, scenario.eviction_deadline, scenario.mode)
        self.collector = MetricsCollector(self.nodes)
        self.drivers: dict[str, PipelineDriver] = {}
        self.templates: dict[str, str] = {}
        self.heap: list[tuple[float, int, int, object]] = []
        self.seq = 0
        self.now = 0.0
        self.last_event_time = 0.0
        self.arrived = 0
        self.horizon_reached = False
        self._ticks: set[float] = set()
        # generous ceiling: each fragment-step pair re-dispatches only a
        # bounded number of times (one eviction, node failures, restarts)
        work = sum(a.job.fragment_count * len(a.job.dag.steps) for a in arrivals)
        self._event_budget = 10_000 + 100 * (work + len(arrivals) + len(scenario.faults))

        for i, a in enumerate(arrivals):
            self._push(a.time, EventKind.JOB_ARRIVAL, i)
        for f in scenario.faults:
            if isinstance(f, NodeFailureFault):
                self._push(f.time, EventKind.NODE_FAILURE, f.node_id)
            else:
                if f.job_index >= len(arrivals):
                    raise ValidationError(
                        f"fault job_index {f.job_index} exceeds arrival count {len(arrivals)}")
                self._push(f.time, EventKind.DRIVER_RESTART,
                           arrivals[f.job_index].job.job_id)
        if scenario.horizon is not None:
            self._push(scenario.horizon, EventKind.SIMULATION_END, None)

    def _push(self, time: float, kind: EventKind, payload: object) -> None:
        heapq.heappush(self.heap, (time, int(kind), self.seq, payload))
        self.seq += 1

    def _push_dispatches(self, dispatches: list[Dispatch]) -> None:
        for d in dispatches:
            self._push(d.finish_time, EventKind.FRAGMENT_COMPLETE, d)

    # -- event handlers -------------------------------------------------------

    def _on_arrival(self, index: int, now: float) -> None:
        a = self.arrivals[index]
        s = self.scenario
        self.drivers[a.job.job_id] = PipelineDriver(
            a.job, s.edge_speed, s.cloud_speed, s.cloud_concurrency)
        self.templates[a.job.job_id] = a.template
        self.sched.submit_request(a.job, now)
        self.arrived += 1
        boundary = self.sched.next_round_at(now)
        if boundary not in self._ticks:
            self._ticks.add(boundary)
            self._push(boundary, EventKind.ROUND_TICK, None)

    def _on_round_tick(self, now: float) -> None:
        self._apply_decision(self.sched.run_round(now), now)

    def _apply_decision(self, decision: ScheduleDecision, now: float) -> None:
        """Deliver directives to drivers; deferred ones become expiry events."""
        edge_changed = False
        for d in decision.directives:
            if isinstance(d, DeployEdge):
                if d.effective_time > now:
                    self._push(d.effective_time, EventKind.EVICTION_EXPIRE,
                               (d.job_id, d.step_id))
                    continue
                drv = self.drivers[d.job_id]
                endpoint = EdgePlacement(d.plan.assignments)
                if drv.step_runtime(d.step_id).endpoint is None:
                    out = drv.on_deploy(d.step_id, endpoint, d.plan.step.replicas, now)
                else:
                    out = drv.redeploy(d.step_id, endpoint, d.plan.step.replicas, now)
                    self.collector.close_entry(d.job_id, d.step_id, now)
                self.collector.open_entry(d.job_id, d.step_id, "edge",
                                          self.sched.rcost_of(d.plan.step), now)
                self._push_dispatches(out)
                edge_changed = True
            elif isinstance(d, DeployCloud):
                if d.effective_time > now:
                    continue  # victim handoff; the expiry event performs it
                drv = self.drivers[d.job_id]
                step = drv.job.dag.step(d.step_id)
                endpoint = CloudPlacement(d.endpoint_label)
                pool = cloud_pool_size(step, self.scenario.cloud_concurrency)
                if drv.step_runtime(d.step_id).endpoint is None:
                    out = drv.on_deploy(d.step_id, endpoint, pool, now)
                else:
                    # lost its edge deployment to a failure; moves right away
                    out = drv.redeploy(d.step_id, endpoint, pool, now)
                    self.collector.close_entry(d.job_id, d.step_id, now)
                    edge_changed = True
                self.collector.open_entry(d.job_id, d.step_id, "cloud",
                                          self.sched.rcost_of(step), now)
                self._push_dispatches(out)
            else:
                drv = self.drivers[d.job_id]
                step = drv.job.dag.step(d.step_id)
                endpoint = CloudPlacement(cloud_label(d.job_id, d.step_id))
                pool = cloud_pool_size(step, self.scenario.cloud_concurrency)
                drv.on_eviction_notice(d.step_id, d.expiry_time, endpoint, pool, now)
                self._push(d.expiry_time, EventKind.EVICTION_EXPIRE,
                           (d.job_id, d.step_id))
        if edge_changed:
            self.collector.sample(now)

    def _on_fragment_complete(self, d: Dispatch, now: float) -> None:
        drv = self.drivers[d.job_id]
        if not drv.is_current_completion(d.step_id, d.fragment, d.finish_time, d.epoch):
            return  # cancelled by eviction, failure, or restart
        effects = drv.on_fragment_complete(d.step_id, d.fragment, now)
        self._push_dispatches(effects.dispatches)
        edge_changed = False
        for sid in effects.completed_steps:
            region = self.sched.complete_step(d.job_id, sid, now)
            self.collector.close_entry(d.job_id, sid, now)
            edge_changed = edge_changed or region == "edge"
        if edge_changed:
            self.collector.sample(now)
        if effects.job_completed:
            self.collector.record_outcome(JobOutcome(
                d.job_id, self.templates[d.job_id],
                drv.job.arrival_time, now, drv.job.deadline))

    def _on_eviction_expire(self, key: tuple[str, str], now: float) -> None:
        job_id, step_id = key
        drv = self.drivers[job_id]
        if self.sched.expire_eviction(key, now):
            # victim's window closed: billing moves to the cloud from here on
            step = drv.job.dag.step(step_id)
            self.collector.close_entry(job_id, step_id, now)
            self.collector.open_entry(job_id, step_id, "cloud",
                                      self.sched.rcost_of(step), now)
            self._push_dispatches(drv.switch_at_expiry(step_id, now))
            self.collector.sample(now)
        elif self.sched.has_reservation(key):
            plan = self.sched.activate_reservation(key, now)
            self.collector.open_entry(job_id, step_id, "edge",
                                      self.sched.rcost_of(plan.step), now)
            self._push_dispatches(drv.on_deploy(
                step_id, EdgePlacement(plan.assignments), plan.step.replicas, now))
            self.collector.sample(now)
        # else: the step completed inside the window, or a node failure
        # already re-homed it; nothing left to do

    def _on_node_failure(self, node_id: int, now: float) -> None:
        decision = self.sched.handle_node_failure(node_id, now)
        self.collector.sample(now)
        self._apply_decision(decision, now)
        self.collector.sample(now)

    def _on_driver_restart(self, job_id: str, now: float) -> None:
        drv = self.drivers.get(job_id)
        if drv is None or drv.is_complete():
            return  # not arrived yet, or already done: restart is a no-op
        self._push_dispatches(drv.resume_from_journal(now))

    # -- the loop ---------------------------------------------------------------

    def run(self) -> RunReport:
        processed = 0
        while self.heap:
            time, kind, _, payload = heapq.heappop(self.heap)
            if time < self.now:
                raise InternalConsistencyError(
                    f"event at {time} scheduled before current time {self.now}")
            processed += 1
            if processed > self._event_budget:
                raise InternalConsistencyError(
                    f"event budget {self._event_budget} exhausted; likely a livelock")
            self.now = time
            if kind == EventKind.SIMULATION_END:
                self._finish_at_horizon(time)
                break
            self.last_event_time = time
            if kind == EventKind.FRAGMENT_COMPLETE:
                self._on_fragment_complete(payload, time)
            elif kind == EventKind.EVICTION_EXPIRE:
                self._on_eviction_expire(payload, time)
            elif kind == EventKind.NODE_FAILURE:
                self._on_node_failure(payload, time)
            elif kind == EventKind.DRIVER_RESTART:
                self._on_driver_restart(payload, time)
            elif kind == EventKind.JOB_ARRIVAL:
                self._on_arrival(payload, time)
            elif kind == EventKind.ROUND_TICK:
                self._on_round_tick(time)
            else:
                raise InternalConsistencyError(f"unknown event kind {kind}")

        end_time = self.horizon if self.horizon_reached else self.last_event_time
        if not self.horizon_reached:
            incomplete = [jid for jid, drv in self.drivers.items() if not drv.is_complete()]
            if incomplete or self.arrived != len(self.arrivals):
                raise InternalConsistencyError(
                    f"run drained with unfinished work: {incomplete or 'missing arrivals'}")
        self.collector.close_all(end_time)
        return RunReport(
            scenario_id=self.scenario.scenario_id,
            mode=self.scenario.mode.value,
            placement=self.scenario.placement.value,
            arrivals=[(a.time, a.job.job_id, a.template) for a in self.arrivals],
            utilization=self.collector.samples,
            cost_ledger=self.collector.entries,
            job_outcomes=self.collector.outcomes,
            end_time=end_time,
            horizon_reached=self.horizon_reached,
        )

    @property
    def horizon(self) -> float:
        assert self.scenario.horizon is not None
        return self.scenario.horizon

    def _finish_at_horizon(self, now: float) -> None:
        """Mark the cut if the cap interrupted work; unfinished jobs count as
        missed with the horizon as their completion time."""
        unfinished = [a for a in self.arrivals[:self.arrived]
                      if not self.drivers[a.job.job_id].is_complete()]
        if not unfinished and self.arrived == len(self.arrivals):
            return
        self.horizon_reached = True
        for a in unfinished:
            self.collector.record_outcome(JobOutcome(
                a.job.job_id, a.template, a.job.arrival_time,
                completion=now, deadline=a.job.deadline, completed=False))


def run_detailed(scenario: Scenario,
                 arrivals: list[ScheduledArrival] | None = None
                 ) -> tuple[RunReport, dict[str, PipelineDriver]]:
    """Like run(), but also returns the final per-job drivers so callers can
    inspect journals and completion counts (e.g. exactly-once verification)."""
    _validate_scenario(scenario)
    if arrivals is None:
        arrivals = generate_arrivals(scenario.arrivals, scenario.catalog)
    log.info("run %s: %d arrivals, mode=%s placement=%s",
             scenario.scenario_id, len(arrivals), scenario.mode.value,
             scenario.placement.value)
    engine = _Engine(scenario, arrivals)
    return engine.run(), engine.drivers


def run(scenario: Scenario,
        arrivals: list[ScheduledArrival] | None = None) -> RunReport:
    """Execute one scenario to completion (or its horizon) and report.

    A precomputed arrival schedule may be passed in so paired runs (baseline
    comparisons, placement sweeps) consume identical arrivals.
    """
    return run_detailed(scenario, arrivals)[0]
