"""End-to-end event-loop behavior: seeded arrivals, hand-traced runs,
eviction handoffs, faults, horizon, and determinism."""

import dataclasses

import pytest

from hcs_sim.core_model import (
    BatchJob,
    CostParams,
    PipelineDag,
    ResourceVector,
    StepSpec,
    ValidationError,
)
from hcs_sim.hcs_scheduler import SchedulerMode
from hcs_sim.placement import PlacementPolicy
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


def vec(cpu: int, mem: int = 0) -> ResourceVector:
    return ResourceVector(cpu, mem)


def step(sid: str = "s0", cpu: int = 500, mem: int = 512, replicas: int = 1,
         svc: float = 1.0, ff: bool = True) -> StepSpec:
    return StepSpec(sid, vec(cpu, mem), replicas, svc, ff)


def template(steps, edges=(), frags: int = 1, deadline: float = 1000.0) -> BatchJob:
    return BatchJob("tpl", PipelineDag(steps, edges), frags, deadline)


def scenario(**kw) -> Scenario:
    defaults = dict(
        scenario_id="t",
        node_capacities=(vec(4000, 8192),),
        catalog={"basic": template([step()])},
        arrivals=ExplicitArrivals((5.0,)),
    )
    defaults.update(kw)
    return Scenario(**defaults)


class TestGenerateArrivals:
    CATALOG = {"a": template([step()]), "b": template([step("s0", 100, 64)])}

    def test_same_seed_gives_identical_schedules(self):
        p = PoissonArrivals(rate=0.1, seed=42, count=50)
        one = generate_arrivals(p, self.CATALOG)
        two = generate_arrivals(p, self.CATALOG)
        assert one == two

    def test_different_seeds_differ(self):
        a = generate_arrivals(PoissonArrivals(0.1, 1, 50), self.CATALOG)
        b = generate_arrivals(PoissonArrivals(0.1, 2, 50), self.CATALOG)
        assert [x.time for x in a] != [x.time for x in b]

    def test_explicit_times_pass_through(self):
        arr = generate_arrivals(ExplicitArrivals((0.0, 10.0, 20.0)), self.CATALOG)
        assert [a.time for a in arr] == [0.0, 10.0, 20.0]
        assert [a.template for a in arr] == ["a", "b", "a"]  # cycles the catalog

    def test_explicit_named_templates(self):
        arr = generate_arrivals(
            ExplicitArrivals((1.0, 2.0), ("b", "b")), self.CATALOG)
        assert all(a.template == "b" for a in arr)

    def test_poisson_mean_matches_rate(self):
        rate = 0.5
        arr = generate_arrivals(PoissonArrivals(rate, 7, 10_000), self.CATALOG)
        times = [a.time for a in arr]
        gaps = [b - a for a, b in zip([0.0] + times, times)]
        mean = sum(gaps) / len(gaps)
        assert abs(mean - 1 / rate) / (1 / rate) < 0.05

    def test_templates_drawn_from_whole_catalog(self):
        arr = generate_arrivals(PoissonArrivals(1.0, 3, 200), self.CATALOG)
        assert {a.template for a in arr} == {"a", "b"}

    def test_job_ids_unique_and_ordered(self):
        arr = generate_arrivals(PoissonArrivals(1.0, 3, 100), self.CATALOG)
        ids = [a.job.job_id for a in arr]
        assert len(set(ids)) == 100
        assert all(a.job.arrival_time == a.time for a in arr)

    def test_bad_rate_rejected(self):
        with pytest.raises(ValidationError):
            generate_arrivals(PoissonArrivals(0.0, 1, 5), self.CATALOG)
        with pytest.raises(ValidationError):
            generate_arrivals(PoissonArrivals(-1.0, 1, 5), self.CATALOG)

    def test_unsorted_explicit_times_rejected(self):
        with pytest.raises(ValidationError):
            generate_arrivals(ExplicitArrivals((5.0, 1.0)), self.CATALOG)

    def test_unknown_template_rejected(self):
        with pytest.raises(ValidationError):
            generate_arrivals(ExplicitArrivals((1.0,), ("zzz",)), self.CATALOG)


class TestSingleJobTrace:
    def test_zero_jobs_is_an_empty_report(self):
        r = run(scenario(arrivals=ExplicitArrivals(())))
        assert r.total_cost == 0.0
        assert r.job_outcomes == []
        assert r.utilization == []
        assert r.end_time == 0.0
        assert not r.horizon_reached

    def test_edge_job_completes_at_round_boundary_plus_service(self):
        # arrival 5 -> first boundary 30 -> one fragment at speed 0.8: 1.25s
        r = run(scenario())
        assert len(r.job_outcomes) == 1
        o = r.job_outcomes[0]
        assert o.completion == pytest.approx(30.0 + 1.0 / 0.8, rel=1e-12)
        assert o.duration == pytest.approx(26.25, rel=1e-12)
        assert r.total_cost == 0.0
        regions = [e.region for e in r.cost_ledger]
        assert regions == ["edge"]

    def test_arrival_exactly_on_boundary_is_scheduled_that_round(self):
        r = run(scenario(arrivals=ExplicitArrivals((30.0,))))
        assert r.job_outcomes[0].completion == pytest.approx(31.25, rel=1e-12)

    def test_cloud_only_cost_is_rate_times_deployed_time(self):
        r = run(scenario(mode=SchedulerMode.CLOUD_ONLY))
        # rcost: 512 MB * 0.1 + 0.5 vCPU * 1000 = 551.2 per second, held 1.0s
        assert len(r.cost_ledger) == 1
        e = r.cost_ledger[0]
        assert e.region == "cloud"
        assert e.deploy_start == 30.0
        assert e.deploy_end == pytest.approx(31.0, rel=1e-12)
        assert r.total_cost == pytest.approx(551.2, rel=1e-9)

    def test_multi_fragment_waves_on_edge(self):
        cat = {"w": template([step(replicas=2)], frags=4)}
        r = run(scenario(catalog=cat, arrivals=ExplicitArrivals((0.5,), ("w",))))
        # 4 fragments over 2 replicas at 1.25s each: two waves
        assert r.job_outcomes[0].completion == pytest.approx(32.5, rel=1e-12)

    def test_cloud_concurrency_overrides_pool(self):
        cat = {"w": template([step(replicas=1)], frags=4)}
        r = run(scenario(catalog=cat, arrivals=ExplicitArrivals((0.5,), ("w",)),
                         mode=SchedulerMode.CLOUD_ONLY, cloud_concurrency=4))
        assert r.job_outcomes[0].completion == pytest.approx(31.0, rel=1e-12)

    def test_two_step_chain_on_edge(self):
        # feed-forward chain, 3 fragments, 1 replica each: (m + N - 1) waves
        cat = {"c": template([step("a"), step("b")], [("a", "b")], frags=3)}
        r = run(scenario(catalog=cat, arrivals=ExplicitArrivals((1.0,), ("c",))))
        assert r.job_outcomes[0].completion == pytest.approx(30 + 4 * 1.25, rel=1e-12)

    def test_oversized_service_time_rejected(self):
        cat = {"slow": template([step(svc=61.0)])}
        with pytest.raises(ValidationError):
            run(scenario(catalog=cat, arrivals=ExplicitArrivals((1.0,), ("slow",))))


class TestEvictionHandoff:
    def build(self):
        cheap = template([step("s0", cpu=1000, mem=0, svc=1.0)], frags=100,
                         deadline=400.0)
        rich = template([step("s0", cpu=3500, mem=0, svc=1.0)], frags=20,
                        deadline=400.0)
        return scenario(
            node_capacities=(vec(4000, 8192),),
            catalog={"cheap": cheap, "rich": rich},
            arrivals=ExplicitArrivals((1.0, 31.0), ("cheap", "rich")),
            cost_params=CostParams(c_cpu=1000.0, c_mem=0.0),
        )

    def test_victim_moves_to_cloud_at_expiry(self):
        r = run(self.build())
        by_key = {}
        for e in r.cost_ledger:
            by_key.setdefault(e.job_id, []).append(e)
        cheap_entries = by_key["cheap-0000"]
        assert [(e.region, e.deploy_start, e.deploy_end) for e in cheap_entries] == [
            ("edge", 30.0, 90.0), ("cloud", 90.0, 165.0)]
        rich_entries = by_key["rich-0001"]
        assert rich_entries[0].region == "edge"
        assert rich_entries[0].deploy_start == 90.0  # waited out the window
        # 24 fragments done by the notice, one more allowed to finish by 61.25,
        # 75 baked on the cloud at rcost 1000/s for 1s each in sequence
        assert r.total_cost == pytest.approx(75_000.0, rel=1e-9)

    def test_both_jobs_complete_exactly_once(self):
        r = run(self.build())
        assert sorted(o.job_id for o in r.job_outcomes) == ["cheap-0000", "rich-0001"]
        cheap, rich = sorted(r.job_outcomes, key=lambda o: o.job_id)
        assert cheap.completion == pytest.approx(165.0, rel=1e-12)
        assert rich.completion == pytest.approx(90 + 20 * 1.25, rel=1e-12)
        assert all(o.met for o in r.job_outcomes)

    def test_utilization_trace_shows_the_swap(self):
        r = run(self.build())
        points = [(s.time, s.allocated_cpu_millicores) for s in r.utilization]
        assert points == [(30.0, 1000), (90.0, 3500), (115.0, 0)]


class TestNodeFailure:
    def build(self, faults=()):
        tpl = template([step("s0", cpu=800, mem=0, svc=1.0)], frags=50, deadline=400.0)
        return scenario(
            node_capacities=(vec(1000, 1024), vec(1000, 1024)),
            catalog={"t": tpl},
            arrivals=ExplicitArrivals((1.0, 5.0), ("t", "t")),
            faults=tuple(faults),
        )

    def test_replicas_on_failed_node_move_to_cloud(self):
        clean = run(self.build())
        faulty = run(self.build([NodeFailureFault(45.0, 0)]))
        # job on node 0 (arrived first, FF) loses its deployment mid-run
        hit = [e for e in faulty.cost_ledger if e.job_id == "t-0000"]
        assert [e.region for e in hit] == ["edge", "cloud"]
        assert hit[0].deploy_end == 45.0
        assert hit[1].deploy_start == 45.0
        assert faulty.total_cost > 0.0
        # every job still completes, same fragment sets as the clean run
        assert sorted(o.job_id for o in faulty.job_outcomes) == \
            sorted(o.job_id for o in clean.job_outcomes)
        assert all(o.completed for o in faulty.job_outcomes)

    def test_unaffected_job_matches_clean_run(self):
        clean = run(self.build())
        faulty = run(self.build([NodeFailureFault(45.0, 0)]))
        pick = lambda r: next(o for o in r.job_outcomes if o.job_id == "t-0001")
        assert pick(faulty).completion == pick(clean).completion

    def test_idle_node_failure_changes_nothing_but_capacity(self):
        tpl = template([step("s0", cpu=800, mem=0)], frags=10, deadline=400.0)
        base = scenario(
            node_capacities=(vec(1000, 1024), vec(1000, 1024)),
            catalog={"t": tpl},
            arrivals=ExplicitArrivals((1.0,), ("t",)),
        )
        clean = run(base)
        faulty = run(dataclasses.replace(base, faults=(NodeFailureFault(35.0, 1),)))
        assert faulty.job_outcomes == clean.job_outcomes
        assert faulty.total_cost == clean.total_cost == 0.0
        assert faulty.utilization[-1].capacity_cpu_millicores == 1000

    def test_failure_of_evicting_node_sends_victim_to_cloud_now(self):
        cheap = template([step("s0", cpu=1000, mem=0)], frags=100, deadline=500.0)
        rich = template([step("s0", cpu=3500, mem=0)], frags=20, deadline=500.0)
        base = scenario(
            node_capacities=(vec(4000, 8192),),
            catalog={"cheap": cheap, "rich": rich},
            arrivals=ExplicitArrivals((1.0, 31.0), ("cheap", "rich")),
            cost_params=CostParams(c_cpu=1000.0, c_mem=0.0),
            faults=(NodeFailureFault(70.0, 0),),
        )
        r = run(base)
        cheap_entries = [e for e in r.cost_ledger if e.job_id == "cheap-0000"]
        assert [e.region for e in cheap_entries] == ["edge", "cloud"]
        assert cheap_entries[1].deploy_start == 70.0  # window cut short
        # the newcomer's reservation died with the node; it goes cloud too
        rich_entries = [e for e in r.cost_ledger if e.job_id == "rich-0001"]
        assert [e.region for e in rich_entries] == ["cloud"]
        assert rich_entries[0].deploy_start == 70.0
        assert all(o.completed for o in r.job_outcomes)


class TestDriverRestart:
    def build(self, faults=()):
        tpl = template([step("a", cpu=500, mem=0), step("b", cpu=500, mem=0)],
                       [("a", "b")], frags=20, deadline=500.0)
        return scenario(
            catalog={"t": tpl},
            arrivals=ExplicitArrivals((1.0,), ("t",)),
            faults=tuple(faults),
        )

    def test_restart_preserves_exactly_once(self):
        clean = run(self.build())
        restarted = run(self.build([DriverRestartFault(40.0, 0)]))
        assert all(o.completed for o in restarted.job_outcomes)
        # in-flight work at the restart is redone, so completion can shift
        assert restarted.job_outcomes[0].completion >= clean.job_outcomes[0].completion

    def test_restart_after_completion_is_a_noop(self):
        clean = run(self.build())
        done_by = clean.job_outcomes[0].completion
        late = run(self.build([DriverRestartFault(done_by + 5.0, 0)]))
        assert late.job_outcomes == clean.job_outcomes
        assert late.cost_ledger == clean.cost_ledger

    def test_restart_before_arrival_is_a_noop(self):
        clean = run(self.build())
        early = run(self.build([DriverRestartFault(0.5, 0)]))
        assert early.job_outcomes == clean.job_outcomes


class TestInjectFaults:
    def test_merges_and_sorts(self):
        s = scenario(faults=(NodeFailureFault(50.0, 0),))
        s2 = inject_faults(s, [DriverRestartFault(10.0, 0)])
        assert [f.time for f in s2.faults] == [10.0, 50.0]

    def test_unknown_node_rejected(self):
        with pytest.raises(ValidationError):
            inject_faults(scenario(), [NodeFailureFault(10.0, 9)])

    def test_double_kill_rejected(self):
        with pytest.raises(ValidationError):
            inject_faults(scenario(), [NodeFailureFault(10.0, 0),
                                       NodeFailureFault(20.0, 0)])

    def test_negative_time_rejected(self):
        with pytest.raises(ValidationError):
            inject_faults(scenario(), [DriverRestartFault(-1.0, 0)])

    def test_fault_past_horizon_rejected(self):
        with pytest.raises(ValidationError):
            inject_faults(scenario(horizon=100.0), [NodeFailureFault(200.0, 0)])

    def test_job_index_out_of_range_fails_at_run(self):
        s = scenario(faults=(DriverRestartFault(10.0, 5),))
        with pytest.raises(ValidationError):
            run(s)


class TestHorizon:
    def test_horizon_cuts_unfinished_work(self):
        tpl = template([step(svc=2.0)], frags=200, deadline=800.0)
        s = scenario(catalog={"t": tpl},
                     arrivals=ExplicitArrivals((1.0,), ("t",)), horizon=50.0)
        r = run(s)
        assert r.horizon_reached
        assert r.end_time == 50.0
        o = r.job_outcomes[0]
        assert not o.completed and not o.met
        assert o.completion == 50.0
        assert all(e.deploy_end is not None and e.deploy_end <= 50.0
                   for e in r.cost_ledger)

    def test_horizon_after_completion_is_clean(self):
        r = run(scenario(horizon=10_000.0))
        assert not r.horizon_reached
        assert r.end_time == pytest.approx(31.25)
        assert r.job_outcomes[0].completed


class TestDeterminism:
    def build(self):
        cat = {
            "small": template([step("s0", cpu=400, mem=256, svc=0.5)], frags=30,
                              deadline=600.0),
            "chain": template(
                [step("a", cpu=900, mem=512, svc=1.0, replicas=2),
                 step("b", cpu=600, mem=256, svc=0.8)],
                [("a", "b")], frags=40, deadline=600.0),
        }
        return scenario(
            node_capacities=(vec(2000, 2048), vec(2000, 2048)),
            catalog=cat,
            arrivals=PoissonArrivals(rate=0.05, seed=99, count=12),
            placement=PlacementPolicy.BEST_FIT,
        )

    def test_repeated_runs_are_identical(self):
        a, b = run(self.build()), run(self.build())
        assert repr(a) == repr(b)
        assert a.total_cost == b.total_cost

    def test_shared_arrivals_can_be_reused(self):
        from hcs_sim.sim_engine import generate_arrivals
        s = self.build()
        arr = generate_arrivals(s.arrivals, s.catalog)
        a = run(s, arrivals=arr)
        b = run(s)
        assert repr(a) == repr(b)

    def test_all_jobs_complete_and_books_balance(self):
        r = run(self.build())
        assert len(r.job_outcomes) == 12
        assert all(o.completed for o in r.job_outcomes)
        assert r.utilization[-1].allocated_cpu_millicores == 0
        recomputed = sum(e.rcost_per_second * (e.deploy_end - e.deploy_start)
                         for e in r.cost_ledger if e.region == "cloud")
        assert r.total_cost == pytest.approx(recomputed, rel=1e-12)
