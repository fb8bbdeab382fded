"""Run measurements: edge utilization trace, cloud cost ledger, per-job outcomes,
and deterministic report files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from hcs_sim.core_model import InternalConsistencyError, ValidationError
from hcs_sim.placement import NodeState


@dataclass(frozen=True)
class UtilizationSample:
    """Edge allocation snapshot; capacity covers alive nodes only."""

    time: float
    allocated_cpu_millicores: int
    capacity_cpu_millicores: int
    allocated_memory_mb: int
    capacity_memory_mb: int

    @property
    def cpu_ratio(self) -> float:
        if self.capacity_cpu_millicores == 0:
            return 0.0
        return self.allocated_cpu_millicores / self.capacity_cpu_millicores


@dataclass
class CostLedgerEntry:
    """One deployment interval of one step in one region."""

    job_id: str
    step_id: str
    region: str  # "edge" | "cloud"
    rcost_per_second: float
    deploy_start: float
    deploy_end: float | None = None

    @property
    def cost(self) -> float:
        if self.deploy_end is None:
            raise InternalConsistencyError(
                f"open ledger entry for {self.job_id}/{self.step_id}")
        if self.region == "edge":
            return 0.0
        return self.rcost_per_second * (self.deploy_end - self.deploy_start)


@dataclass
class JobOutcome:
    job_id: str
    template: str
    arrival: float
    completion: float
    deadline: float
    completed: bool = True

    @property
    def duration(self) -> float:
        return self.completion - self.arrival

    @property
    def met(self) -> bool:
        return self.completed and self.duration <= self.deadline

    @property
    def miss_by(self) -> float:
        return 0.0 if self.met else max(0.0, self.duration - self.deadline)


@dataclass
class RunReport:
    scenario_id: str
    mode: str
    placement: str
    arrivals: list[tuple[float, str, str]]  # (time, job_id, template)
    utilization: list[UtilizationSample]
    cost_ledger: list[CostLedgerEntry]
    job_outcomes: list[JobOutcome]
    end_time: float
    horizon_reached: bool = False

    @property
    def total_cost(self) -> float:
        return sum(e.cost for e in self.cost_ledger)

    @property
    def deadline_met_fraction(self) -> float:
        if not self.job_outcomes:
            return 1.0
        return sum(1 for o in self.job_outcomes if o.met) / len(self.job_outcomes)

    @property
    def mean_utilization(self) -> float:
        """Time-weighted CPU utilization over the whole run (zero before the
        first sample)."""
        if not self.utilization or self.end_time <= 0:
            return 0.0
        t0 = self.utilization[0].time
        if t0 >= self.end_time:
            return 0.0
        busy = time_weighted_utilization(self.utilization, t0, self.end_time)
        return busy * (self.end_time - t0) / self.end_time

    @property
    def peak_utilization(self) -> float:
        return max((s.cpu_ratio for s in self.utilization), default=0.0)


class MetricsCollector:
    """Accumulates samples and ledger entries as the engine reports them."""

    def __init__(self, nodes: list[NodeState]):
        self.nodes = nodes
        self.samples: list[UtilizationSample] = []
        self.entries: list[CostLedgerEntry] = []
        self._open: dict[tuple[str, str], CostLedgerEntry] = {}
        self.outcomes: list[JobOutcome] = []

    def sample(self, now: float) -> None:
        alive = [n for n in self.nodes if n.alive]
        s = UtilizationSample(
            now,
            sum(n.allocated.cpu_millicores for n in alive),
            sum(n.capacity.cpu_millicores for n in alive),
            sum(n.allocated.memory_mb for n in alive),
            sum(n.capacity.memory_mb for n in alive),
        )
        if self.samples and self.samples[-1].time == now:
            self.samples[-1] = s  # several changes at one instant collapse
        else:
            self.samples.append(s)

    def open_entry(self, job_id: str, step_id: str, region: str,
                   rcost_per_second: float, start: float) -> None:
        key = (job_id, step_id)
        if key in self._open:
            raise InternalConsistencyError(f"ledger entry already open for {key}")
        entry = CostLedgerEntry(job_id, step_id, region, rcost_per_second, start)
        self._open[key] = entry
        self.entries.append(entry)

    def close_entry(self, job_id: str, step_id: str, end: float) -> None:
        entry = self._open.pop((job_id, step_id), None)
        if entry is not None:
            entry.deploy_end = end

    def has_open_entry(self, job_id: str, step_id: str) -> bool:
        return (job_id, step_id) in self._open

    def close_all(self, end: float) -> None:
        for key in sorted(self._open):
            self.close_entry(key[0], key[1], end)

    def record_outcome(self, outcome: JobOutcome) -> None:
        self.outcomes.append(outcome)


def time_weighted_utilization(trace: list[UtilizationSample], t0: float, t1: float) -> float:
    """Integral of the piecewise-constant CPU allocation ratio over [t0, t1].

    Each sample's ratio holds until the next sample; the last one extends to
    t1. The trace must start at or before t0.
    """
    if t1 <= t0:
        raise ValidationError("need t1 > t0")
    if not trace:
        raise ValidationError("empty utilization trace")
    if trace[0].time > t0:
        raise ValidationError(f"trace starts at {trace[0].time}, after t0={t0}")
    area = 0.0
    for i, s in enumerate(trace):
        seg_start = max(s.time, t0)
        seg_end = trace[i + 1].time if i + 1 < len(trace) else t1
        seg_end = min(seg_end, t1)
        if seg_end > seg_start:
            area += s.cpu_ratio * (seg_end - seg_start)
        if seg_end >= t1:
            break
    return area / (t1 - t0)


def cost_vs_baseline(report: RunReport, baseline: RunReport) -> float:
    """Hybrid cost as a percentage of the baseline's."""
    base = baseline.total_cost
    hybrid = report.total_cost
    if base == 0.0:
        if hybrid > 0.0:
            raise ValidationError("baseline run has zero cost but hybrid does not")
        return 100.0
    return 100.0 * hybrid / base


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".9g")
    return str(value)


def _round9(value: float) -> float:
    return float(format(value, ".9g"))


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_json(path: Path, obj: dict) -> None:
    """Deterministic JSON: sorted keys, 2-space indent, LF, trailing newline."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def summary_dict(report: RunReport) -> dict:
    return {
        "scenario_id": report.scenario_id,
        "mode": report.mode,
        "placement": report.placement,
        "job_count": len(report.job_outcomes),
        "total_cost": _round9(report.total_cost),
        "mean_utilization": _round9(report.mean_utilization),
        "peak_utilization": _round9(report.peak_utilization),
        "deadline_met_fraction": _round9(report.deadline_met_fraction),
        "end_time": _round9(report.end_time),
        "horizon_reached": report.horizon_reached,
    }


def emit_report(report: RunReport, out_dir: str | Path,
                emit_plot_data: bool = False) -> list[Path]:
    """Write the report as CSV files plus a JSON summary.

    Output is byte-deterministic: stable sort orders, 9-significant-digit
    floats, LF newlines, UTF-8, and nothing time-of-day dependent.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    p = out / "arrivals.csv"
    _write_csv(p, ["time", "job_id", "template"],
               [[t, j, tpl] for t, j, tpl in report.arrivals])
    written.append(p)

    p = out / "utilization.csv"
    _write_csv(p, ["time", "allocated_cpu_millicores", "capacity_cpu_millicores",
                   "allocated_memory_mb", "capacity_memory_mb", "cpu_utilization"],
               [[s.time, s.allocated_cpu_millicores, s.capacity_cpu_millicores,
                 s.allocated_memory_mb, s.capacity_memory_mb, s.cpu_ratio]
                for s in report.utilization])
    written.append(p)

    p = out / "cost_ledger.csv"
    ledger = sorted(report.cost_ledger, key=lambda e: (e.job_id, e.step_id, e.deploy_start))
    _write_csv(p, ["job_id", "step_id", "region", "rcost_per_second",
                   "deploy_start", "deploy_end", "cost"],
               [[e.job_id, e.step_id, e.region, e.rcost_per_second,
                 e.deploy_start, e.deploy_end, e.cost] for e in ledger])
    written.append(p)

    p = out / "job_outcomes.csv"
    outcomes = sorted(report.job_outcomes, key=lambda o: (o.arrival, o.job_id))
    _write_csv(p, ["job_id", "template", "arrival", "completion", "duration",
                   "deadline", "met", "miss_by", "completed"],
               [[o.job_id, o.template, o.arrival, o.completion, o.duration,
                 o.deadline, o.met, o.miss_by, o.completed] for o in outcomes])
    written.append(p)

    p = out / "summary.json"
    write_json(p, summary_dict(report))
    written.append(p)

    if emit_plot_data:
        written.extend(_emit_plot_data(report, out))
    return written


def _emit_plot_data(report: RunReport, out: Path) -> list[Path]:
    """Small ready-to-plot series: utilization over time, cumulative cloud
    cost over time, and per-job durations."""
    written = []
    samples = report.utilization
    stride = max(1, len(samples) // 500)
    kept = samples[::stride]
    if samples and (not kept or kept[-1] is not samples[-1]):
        kept.append(samples[-1])
    p = out / "plot_utilization.csv"
    _write_csv(p, ["time", "cpu_utilization"], [[s.time, s.cpu_ratio] for s in kept])
    written.append(p)

    events = sorted((e.deploy_end, e.cost) for e in report.cost_ledger if e.cost > 0)
    running = 0.0
    rows = []
    for t, c in events:
        running += c
        rows.append([t, running])
    p = out / "plot_cost.csv"
    _write_csv(p, ["time", "cumulative_cost"], rows)
    written.append(p)

    p = out / "plot_durations.csv"
    outcomes = sorted(report.job_outcomes, key=lambda o: (o.arrival, o.job_id))
    _write_csv(p, ["job_id", "template", "duration", "deadline", "met"],
               [[o.job_id, o.template, o.duration, o.deadline, o.met]
                for o in outcomes])
    written.append(p)
    return written
