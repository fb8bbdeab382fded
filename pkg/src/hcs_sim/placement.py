"""Greedy replica placement over finite edge nodes, plus an exhaustive feasibility oracle."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

from hcs_sim.core_model import (
    InternalConsistencyError,
    ResourceVector,
    StepSpec,
    ValidationError,
)


class PlacementPolicy(str, Enum):
    FIRST_FIT = "ff"
    BEST_FIT = "bf"
    ROUND_ROBIN = "rr"
    WORST_FIT = "wf"


@dataclass
class NodeState:
    """Mutable capacity account for one edge node."""

    node_id: int
    capacity: ResourceVector
    allocated: ResourceVector = field(default_factory=ResourceVector)
    alive: bool = True

    @property
    def free(self) -> ResourceVector:
        return self.capacity - self.allocated


@dataclass
class PlacementPlan:
    """Committed outcome of a placement attempt: replica index -> node id."""

    step: StepSpec
    assignments: dict[int, int]

    def node_loads(self) -> dict[int, ResourceVector]:
        """Demand this plan puts on each node it touches."""
        loads: dict[int, ResourceVector] = {}
        d = self.step.demand_per_replica
        for _, node_id in sorted(self.assignments.items()):
            loads[node_id] = loads.get(node_id, ResourceVector()) + d
        return loads


def _fits(free: tuple[int, int], demand: tuple[int, int]) -> bool:
    return free[0] >= demand[0] and free[1] >= demand[1]


def try_place_free(step: StepSpec, free: list[tuple[int, int] | None],
                   policy: PlacementPolicy, rr_cursor: int = 0,
                   ) -> tuple[PlacementPlan | None, int]:
    """Plan a full replica set against per-node free capacity, all-or-nothing.

    Args:
        step: step whose replicas are being placed.
        free: per-node (cpu_millicores, memory_mb) still free; None marks a dead node.
        policy: greedy rule choosing a node per replica.
        rr_cursor: round-robin position; ignored by the other policies.

    Returns:
        (plan, new_cursor). plan is None when the replica set does not fit,
        in which case no capacity or cursor change escapes.
    """
    demand = (step.demand_per_replica.cpu_millicores, step.demand_per_replica.memory_mb)
    remaining = [None if f is None else list(f) for f in free]
    n = len(remaining)
    if n == 0:
        return None, rr_cursor
    assignments: dict[int, int] = {}
    cursor = rr_cursor % n

    for replica in range(step.replicas):
        chosen = -1
        if policy is PlacementPolicy.FIRST_FIT:
            for i, f in enumerate(remaining):
                if f is not None and _fits(f, demand):
                    chosen = i
                    break
        elif policy is PlacementPolicy.BEST_FIT:
            best = None
            for i, f in enumerate(remaining):
                if f is None or not _fits(f, demand):
                    continue
                key = (f[0], f[1], i)  # least remaining cpu, then memory, then index
                if best is None or key < best:
                    best = key
                    chosen = i
        elif policy is PlacementPolicy.WORST_FIT:
            best = None
            for i, f in enumerate(remaining):
                if f is None or not _fits(f, demand):
                    continue
                key = (-f[0], -f[1], i)  # most remaining cpu, then memory, then index
                if best is None or key < best:
                    best = key
                    chosen = i
        elif policy is PlacementPolicy.ROUND_ROBIN:
            for off in range(n):
                i = (cursor + off) % n
                f = remaining[i]
                if f is not None and _fits(f, demand):
                    chosen = i
                    cursor = (i + 1) % n
                    break
        else:
            raise ValidationError(f"unknown policy {policy!r}")
        if chosen < 0:
            return None, rr_cursor
        assignments[replica] = chosen
        remaining[chosen][0] -= demand[0]
        remaining[chosen][1] -= demand[1]

    new_cursor = cursor if policy is PlacementPolicy.ROUND_ROBIN else rr_cursor
    return PlacementPlan(step, assignments), new_cursor


def try_place(step: StepSpec, nodes: list[NodeState], policy: PlacementPolicy,
              rr_cursor: int = 0) -> tuple[PlacementPlan | None, int]:
    """Plan against live node state without mutating it."""
    free = [(n.free.cpu_millicores, n.free.memory_mb) if n.alive else None for n in nodes]
    return try_place_free(step, free, policy, rr_cursor)


def apply_plan(plan: PlacementPlan, nodes: list[NodeState]) -> None:
    """Commit a plan's allocations. Capacity overrun means the planner is broken."""
    for node_id, load in plan.node_loads().items():
        node = nodes[node_id]
        if not node.alive:
            raise InternalConsistencyError(f"plan assigns replicas to dead node {node_id}")
        new_alloc = node.allocated + load
        if not new_alloc.fits_within(node.capacity):
            raise InternalConsistencyError(
                f"node {node_id} over capacity: {new_alloc} > {node.capacity}")
        node.allocated = new_alloc
    for node in nodes:
        if not node.alive and node.allocated != ResourceVector():
            raise InternalConsistencyError(f"dead node {node.node_id} holds allocations")


def release(plan: PlacementPlan, nodes: list[NodeState]) -> None:
    """Return a plan's allocations. Releasing more than held means double release."""
    for node_id, load in plan.node_loads().items():
        node = nodes[node_id]
        if not load.fits_within(node.allocated):
            raise InternalConsistencyError(
                f"release of unheld allocation on node {node_id}: {load} > {node.allocated}")
        node.allocated = node.allocated - load


def oracle_feasible(step: StepSpec, nodes: list[NodeState],
                    max_replicas: int = 12, max_nodes: int = 6) -> bool:
    """Exhaustive feasibility check for one replica set, intended for tests.

    Searches every way to split the replica count across nodes (replicas are
    interchangeable, so assignments are multisets of node choices). Refuses
    instances larger than the stated bounds rather than run forever.
    """
    alive = [n for n in nodes if n.alive]
    if step.replicas > max_replicas or len(alive) > max_nodes:
        raise ValidationError(
            f"oracle limited to {max_replicas} replicas over {max_nodes} nodes")
    d = step.demand_per_replica
    caps = []
    for n in alive:
        per_dim = []
        if d.cpu_millicores > 0:
            per_dim.append(n.free.cpu_millicores // d.cpu_millicores)
        if d.memory_mb > 0:
            per_dim.append(n.free.memory_mb // d.memory_mb)
        caps.append(min(per_dim) if per_dim else step.replicas)

    def search(i: int, remaining: int) -> bool:
        if remaining == 0:
            return True
        if i == len(caps):
            return False
        if sum(caps[i:]) < remaining:
            return False
        for take in range(min(caps[i], remaining), -1, -1):
            if search(i + 1, remaining - take):
                return True
        return False

    return search(0, step.replicas)
