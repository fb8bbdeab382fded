"""Deterministic simulator for hybrid edge/cloud scheduling of serverless batch pipelines."""

from hcs_sim.core_model import (
    BatchJob,
    CloudPlacement,
    CostParams,
    EdgePlacement,
    InternalConsistencyError,
    PipelineDag,
    ResourceVector,
    StepSpec,
    StepState,
    ValidationError,
    rcost,
    total_cost,
    validate_job,
)
from hcs_sim.hcs_scheduler import HcsScheduler, SchedulerMode
from hcs_sim.metrics import (
    CostLedgerEntry,
    JobOutcome,
    RunReport,
    UtilizationSample,
    cost_vs_baseline,
    emit_report,
    time_weighted_utilization,
)
from hcs_sim.pipeline_driver import PipelineDriver
from hcs_sim.placement import NodeState, PlacementPolicy
from hcs_sim.sim_engine import (
    DriverRestartFault,
    ExplicitArrivals,
    NodeFailureFault,
    PoissonArrivals,
    Scenario,
    generate_arrivals,
    inject_faults,
    run,
)

__all__ = [
    "BatchJob",
    "CloudPlacement",
    "CostLedgerEntry",
    "CostParams",
    "DriverRestartFault",
    "EdgePlacement",
    "ExplicitArrivals",
    "HcsScheduler",
    "InternalConsistencyError",
    "JobOutcome",
    "NodeFailureFault",
    "NodeState",
    "PipelineDag",
    "PipelineDriver",
    "PlacementPolicy",
    "PoissonArrivals",
    "ResourceVector",
    "RunReport",
    "Scenario",
    "SchedulerMode",
    "StepSpec",
    "StepState",
    "UtilizationSample",
    "ValidationError",
    "cost_vs_baseline",
    "emit_report",
    "generate_arrivals",
    "inject_faults",
    "rcost",
    "run",
    "time_weighted_utilization",
    "total_cost",
    "validate_job",
]
