import io
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairio.errors import ConfigError
from fairio.jobs import JobInfo, apply_heartbeat, expire_inactive
from fairio.policy import compute_assignment
from fairio.sim import (SimConfig, Simulation, Trace, WorkloadSpec, collect_metrics, handle_sync,
                        load_scenario, run, scenario_from_doc, simulate, write_summary_csv, write_windows_csv)
from fairio.sim.engine import TokenDispatcher

from conftest import SCENARIOS

S = 1_000_000


def small(policy="job-fair", **kw):
    jobs = kw.pop("jobs", (WorkloadSpec("J1", "a", "g", 2, procs_per_node=8, run_length=8),
                           WorkloadSpec("J2", "b", "g", 1, procs_per_node=8, start_offset=2, run_length=4)))
    return SimConfig(jobs=jobs, duration=kw.pop("duration", 8), policy=policy, **kw)


def csv_bytes(m):
    a, b = io.StringIO(), io.StringIO()
    write_windows_csv(m, a)
    write_summary_csv(m, b)
    return a.getvalue(), b.getvalue()


# -- basic behaviour

def test_single_job_saturates_server():
    m = run(SimConfig(jobs=(WorkloadSpec("J1", "a", "g", 1, run_length=10),), duration=10))
    assert m.utilization() >= 0.95
    assert m.share("J1") == 1.0


def test_service_time_model():
    sim = Simulation(small())
    assert sim.service_us(10_000_000) == 4010
    assert sim.service_us(0) == 10


def test_determinism():
    a, b = run(small()), run(small())
    assert csv_bytes(a) == csv_bytes(b)


def test_seed_changes_trace_not_means():
    t1 = simulate(small(seed=1))
    t2 = simulate(small(seed=2))
    assert t1.comp_job != t2.comp_job
    m1, m2 = collect_metrics(t1), collect_metrics(t2)
    assert m1.share("J1") == pytest.approx(m2.share("J1"), abs=0.05)


def test_conservation():
    tr = simulate(small(), keep_requests=True)
    assert tr.issued == tr.completed + tr.in_flight
    ids = [r.request_id for r in tr.requests]
    assert len(ids) == len(set(ids)) == tr.completed
    assert sum(tr.comp_bytes) == sum(r.length for r in tr.requests)
    assert sum(tr.comp_bytes) <= tr.issued_bytes
    for r in tr.requests:
        assert r.arrival_time <= r.dispatch_time < r.completion_time


def test_capacity_per_window():
    cfg = small(n_servers=2)
    m = run(cfg)
    cap = cfg.workers_per_server * cfg.per_worker_bandwidth * cfg.window
    for sid, series in m.server_bytes.items():
        assert series.max() <= cap + m.max_request_bytes


def test_window_sums_equal_totals():
    m = run(small())
    for k in m.job_ids:
        assert int(m.job_bytes[k].sum()) == m.totals[k]
    assert m.n_windows == 8
    assert sum(m.user_totals().values()) == m.aggregate_bytes() == sum(m.group_totals().values())


def test_job_fair_pair_splits_evenly():
    m = run(small())
    assert m.share("J1") == pytest.approx(0.5, abs=0.03)
    assert m.sharing_windows().sum() == 4


def test_size_fair_pair():
    m = run(small("size-fair"))
    assert m.ratio("J1", "J2") == pytest.approx(2.0, rel=0.1)


def test_expired_job_queue_dropped():
    cfg = small(heartbeat_timeout=1.0, duration=8)
    sim = Simulation(cfg)
    sim.run()
    for s in sim.servers:
        assert not s.table["J2"].active
        assert "J2" not in s.qs.queues


def test_tbf_idles_with_pending_work():
    cfg = small("tbf", tbf_rate=50.0)
    tr = simulate(cfg)
    m = collect_metrics(tr)
    assert tr.throttled[0] > 0
    assert m.utilization() < 0.5


@pytest.mark.parametrize("policy", ["fifo", "gift", "tbf", "themis:size-fair", "user-fair"])
def test_every_scheduler_runs(policy):
    m = run(small(policy))
    assert m.aggregate_bytes() > 0


def test_fixed_budget_and_end_on_completion():
    job = WorkloadSpec("J1", "a", "g", 1, procs_per_node=4, bytes_per_proc=50e6)
    tr = simulate(SimConfig(jobs=(job,), duration=100, end_on_completion=True))
    assert tr.job_finish["J1"] == tr.end_us < 100 * S
    assert sum(tr.comp_bytes) == 4 * 50e6  # budget covers reads and writes


def test_hash_disjoint_pinning():
    jobs = (WorkloadSpec("J1", "a", "g", 1, procs_per_node=8, run_length=3, servers=(1,)),
            WorkloadSpec("J2", "b", "g", 1, procs_per_node=8, run_length=3))
    tr = simulate(SimConfig(jobs=jobs, duration=3, n_servers=3, placement="hash-disjoint"))
    assert {s for j, s in zip(tr.comp_job, tr.comp_server) if j == 0} == {1}
    assert len({s for j, s in zip(tr.comp_job, tr.comp_server) if j == 1}) > 1


def test_all_servers_striping_spreads_bytes():
    m = run(small(n_servers=2))
    a, b = (int(v.sum()) for v in m.server_bytes.values())
    assert abs(a - b) / (a + b) < 0.1


def test_filestore_attached():
    sc = load_scenario(SCENARIOS / "metadata_iops.json")
    cfg = replace(sc.config, duration=0.5, jobs=tuple(replace(j, run_length=0.5) for j in sc.config.jobs))
    tr = simulate(cfg)
    store = tr.store
    assert store is not None
    names = store.readdir("/fs/SMALL")
    assert len(names) == 2
    assert store.stat(f"/fs/SMALL/{names[0]}")["size"] == 250_000
    m = collect_metrics(tr)
    assert m.totals["STAT"] == 0 and m.total_ops["STAT"] > 0


# -- sync

def fig4_sim():
    jobs = (WorkloadSpec("J1", "a", "g", 16, run_length=1, servers=(0, 1)),
            WorkloadSpec("J2", "b", "g", 8, run_length=1, servers=(0,)),
            WorkloadSpec("J3", "c", "g", 8, run_length=1, servers=(1,)))
    cfg = SimConfig(jobs=jobs, duration=1, n_servers=2, placement="hash-disjoint", policy="size-fair")
    sim = Simulation(cfg)
    j1, j2, j3 = (JobInfo(j.job_id, j.user_id, j.group_id, j.node_count) for j in jobs)
    s0, s1 = sim.servers
    s0.table = apply_heartbeat(apply_heartbeat(s0.table, replace(j1, servers=frozenset({0})), 0),
                                 replace(j2, servers=frozenset({0})), 0)
    s1.table = apply_heartbeat(apply_heartbeat(s1.table, replace(j1, servers=frozenset({1})), 0),
                                 replace(j3, servers=frozenset({1})), 0)
    return sim


def effective(server):
    # renormalised over jobs that can have a queue on this server
    d = server.dispatcher
    d.refresh()
    local = {k: w for k, w in d.weights.items() if server.sid in server.table[k].servers}
    total = sum(local.values())
    return {k: w / total for k, w in local.items()}


def test_sync_fig4():
    sim = fig4_sim()
    pol = sim.cfg.policy_spec
    for s in sim.servers:
        assert compute_assignment(pol, s.table)["J1"] == pytest.approx(2 / 3)
        assert effective(s)["J1"] == pytest.approx(2 / 3)
    handle_sync(sim.servers, 500_000)
    for s in sim.servers:
        assert compute_assignment(pol, s.table)["J1"] == pytest.approx(0.5)
        assert effective(s)["J1"] == pytest.approx(0.5)
    assert sim.servers[0].table.entries == sim.servers[1].table.entries


def test_sync_noop_when_identical():
    sim = fig4_sim()
    handle_sync(sim.servers, 1)
    before = [dict(effective(s)) for s in sim.servers]
    handle_sync(sim.servers, 2)
    assert [effective(s) for s in sim.servers] == before


def test_sync_propagates_latest_heartbeat():
    sim = fig4_sim()
    s0, s1 = sim.servers
    s0.table = expire_inactive(s0.table, 20 * S, 10 * S)
    s1.table = apply_heartbeat(s1.table, JobInfo("J1", "a", "g", 16, servers=frozenset({1})), 19 * S)
    assert not s0.table["J1"].active
    handle_sync(sim.servers, 20 * S)
    assert s0.table["J1"].active and s0.table["J1"].last_heartbeat == 19 * S


def test_dispatcher_type():
    assert isinstance(fig4_sim().servers[0].dispatcher, TokenDispatcher)


@pytest.mark.parametrize("lam", [50, 500])
def test_lambda_bound(lam):
    sc = load_scenario(SCENARIOS / "fig12_lambda.json")
    m = run(replace(sc.config, lambda_ms=lam, duration=12))
    assert m.episodes, "scenario should create membership changes"
    assert all(e is not None for _, e in m.episodes)
    assert m.time_to_global_fairness <= 2 * lam / 1000 + 1e-9


def test_without_sync_never_converges():
    sc = load_scenario(SCENARIOS / "fig12_lambda.json")
    m = run(replace(sc.config, lambda_ms=None, duration=8))
    assert m.episodes[-1][1] is None
    assert m.time_to_global_fairness == float("inf")
    assert m.fairness_window is None


# -- metrics on synthetic traces

def synthetic(rates, seconds=10):
    tr = Trace(job_ids=list(rates), job_meta={k: ("u" + k, "g", 1) for k in rates}, n_servers=1,
               window_us=S, warmup_us=0, end_us=seconds * S, capacity_bps=1e9, max_request_bytes=1000)
    for t in range(0, seconds * S, S // 10):
        for i, (k, r) in enumerate(rates.items()):
            tr.record(t, i, 0, r // 10)
    for k in rates:
        tr.job_start[k], tr.job_end[k] = 0, seconds * S
    return tr


def test_constant_rate_zero_std():
    m = collect_metrics(synthetic({"J1": 1000, "J2": 3000}))
    assert m.share_std("J1") == 0.0 and m.throughput_std("J1") == 0.0
    assert m.share("J2") == pytest.approx(0.75)


def test_two_equal_jobs_half():
    m = collect_metrics(synthetic({"A": 500, "B": 500}))
    np.testing.assert_allclose(m.window_shares("A"), 0.5)
    assert m.ratio("A", "B") == 1.0
    assert m.share("user:uA") == 0.5 and m.share("group:g") == 1.0


def test_entity_errors():
    m = collect_metrics(synthetic({"A": 500}))
    with pytest.raises(KeyError):
        m.entity_bytes("nobody")


# -- config

BASE = {"duration_s": 5, "jobs": [{"job_id": "J1", "node_count": 1, "pattern": {"type": "write_read_cycle"},
                                   "run_length_s": 5}]}


def doc(**kw):
    d = json.loads(json.dumps(BASE))
    d.update(kw)
    return d


def test_config_defaults():
    cfg = scenario_from_doc(doc()).config
    assert (cfg.workers_per_server, cfg.per_worker_bandwidth, cfg.heartbeat_interval) == (8, 2.5e9, 1.0)
    assert cfg.timeout == 10.0 and cfg.scheduler == "tokens" and cfg.jobs[0].user_id == "J1"


@pytest.mark.parametrize("bad, where", [
    ({"n_servers": 0}, "n_servers"),
    ({"placement": "random"}, "placement"),
    ({"jobs": []}, "jobs"),
    ({"duration_s": -1}, "duration_s"),
    ({"bogus": 1}, "bogus"),
    ({"jobs": [{"job_id": "J1", "node_count": 1, "pattern": {"type": "dd"}}]}, "jobs[0].pattern.type"),
])
def test_schema_errors_name_the_field(bad, where):
    with pytest.raises(ConfigError) as exc:
        scenario_from_doc(doc(**bad))
    assert where.split(".")[0].split("[")[0] in str(exc.value)


@pytest.mark.parametrize("bad, msg", [
    ({"policy": "disk-fair"}, "policy"),
    ({"jobs": [{"job_id": "J1", "node_count": 1, "pattern": {"type": "write_read_cycle"}}]}, "run_length_s"),
    ({"jobs": BASE["jobs"] * 2}, "duplicate"),
    ({"jobs": [{**BASE["jobs"][0], "servers": [3]}]}, "servers"),
    ({"expectations": [{"name": "x", "kind": "share", "entity": "J9", "target": 1, "abs_tol": 0}]}, "J9"),
    ({"expectations": [{"name": "x", "kind": "ratio", "numerator": "J1"}]}, "denominator"),
    ({"expectations": [{"name": "x", "kind": "convergence", "max_lambdas": 2}]}, "lambda"),
    ({"expectations": [{"name": "x", "kind": "slowdown", "job": "J1"}]}, "min"),
    ({"tbf": {"rate": {"J7": 3}}}, "tbf.rate"),
])
def test_semantic_errors(bad, msg):
    with pytest.raises(ConfigError, match=msg):
        scenario_from_doc(doc(**bad))


def test_load_scenario_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "duration_s": 5,\n  "jobs": [,]\n}\n')
    with pytest.raises(ConfigError, match="line 3 column"):
        load_scenario(p)


def test_only_jobs_and_with_policy():
    cfg = small()
    assert [j.job_id for j in cfg.only_jobs({"J2"}).jobs] == ["J2"]
    assert cfg.with_policy("fifo").scheduler == "fifo"
    assert cfg.with_policy("themis:user-fair").policy_spec.levels == ("user", "job")


def test_all_fixture_scenarios_load():
    for p in sorted(SCENARIOS.glob("*.json")):
        load_scenario(p)


@settings(max_examples=12, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 4), st.integers(1, 8), st.sampled_from([0.0, 0.5, 1.5])),
                min_size=1, max_size=4),
       st.sampled_from(["job-fair", "size-fair", "fifo", "gift", "tbf"]),
       st.integers(1, 3))
def test_conservation_property(jobs, policy, n_servers):
    specs = tuple(WorkloadSpec(f"J{i}", f"u{i % 2}", "g", n, procs_per_node=p, start_offset=s, run_length=2)
                  for i, (n, p, s) in enumerate(jobs))
    cfg = SimConfig(jobs=specs, duration=2.5, n_servers=n_servers, policy=policy, warmup=0)
    tr = simulate(cfg)
    assert tr.issued == tr.completed + tr.in_flight
    m = collect_metrics(tr)
    cap = cfg.workers_per_server * cfg.per_worker_bandwidth * cfg.window
    for series in m.server_bytes.values():
        assert series.max() <= cap + m.max_request_bytes
