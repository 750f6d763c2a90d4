"""Deterministic discrete-event burst-buffer simulator.

Clients on compute nodes issue synchronous requests to one or more servers.
Each server queues requests per job and hands them to a fixed pool of
workers through its dispatcher (statistical tokens, FIFO, GIFT-like or
TBF-like). Service time is ``overhead + bytes / per_worker_bandwidth``.
Jobs heartbeat the servers they talk to; servers expire silent jobs and,
every lambda, all-gather their job tables.

Time is integer microseconds. The event heap is ordered by (time, sequence
number), so a run is a pure function of its config.
"""
from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from ..baselines import GiftState, TbfState, gift_next, gift_recompute, tbf_next, tbf_refill
from ..errors import NoActiveJobs, Throttled
from ..filestore import FileStore, bytes_per_server, place
from ..jobs import JobInfo, JobStatusTable, apply_heartbeat, expire_inactive, merge_tables
from ..policy import compute_assignment
from ..scheduler import IORequest, QueueSet, fifo_next, next_request
from .config import US, SimConfig
from .workload import operations, stream_path

COMPLETE, JOB_START, JOB_STOP, HEARTBEAT, EXPIRE, SYNC, REFILL, WINDOW = range(8)

ASSIGNMENT_TOL = 1e-9


def _us(seconds) -> int:
    return int(round(seconds * US))


# -- dispatchers ---------------------------------------------------------------

class TokenDispatcher:
    """Statistical tokens over the server's own job table.

    A job's probability is divided by the number of servers its heartbeats
    are known to reach, so a job spread over k servers does not collect its
    full share on each of them.
    """

    def __init__(self, server, policy):
        self.server = server
        self.policy = policy
        self._epoch = None
        self.weights = {}
        self.assignment = None

    def refresh(self):
        table = self.server.table
        if table.epoch == self._epoch:
            return
        self._epoch = table.epoch
        try:
            self.assignment = compute_assignment(self.policy, table)
        except NoActiveJobs:
            self.assignment = None
            self.weights = {}
            return
        self.weights = {
            k: p / max(len(table.entries[k].servers), 1)
            for k, p in self.assignment.probabilities.items() if p > 0
        }

    def select(self, qs, now):
        self.refresh()
        return next_request(qs, self.weights, self.server.rng)


class FifoDispatcher:
    def select(self, qs, now):
        return fifo_next(qs)


class GiftDispatcher:
    def __init__(self, mu_us):
        self.state = GiftState(mu=mu_us)

    def select(self, qs, now):
        gift_recompute(self.state, qs, now)
        return gift_next(self.state, qs)


class TbfDispatcher:
    def __init__(self, state: TbfState):
        self.state = state

    def select(self, qs, now):
        return tbf_next(self.state, qs)


def handle_sync(servers, now):
    """All-gather: every server adopts the merge of all local tables.

    Dispatchers notice the new epoch and recompute their assignment on the
    next draw.
    """
    merged = merge_tables([s.table for s in servers])
    for s in servers:
        s.table = merged
        if isinstance(s.dispatcher, TokenDispatcher):
            s.dispatcher.refresh()
    return servers


# -- simulation state ----------------------------------------------------------

class Server:
    def __init__(self, sid, cfg: SimConfig):
        self.sid = sid
        self.qs = QueueSet()
        self.free = cfg.workers_per_server
        self.table = JobStatusTable()
        self.rng = random.Random(f"{cfg.seed}:server:{sid}")
        self.dispatcher = None
        self.throttled = 0


class Job:
    def __init__(self, idx, spec):
        self.idx = idx
        self.spec = spec
        self.info = JobInfo(spec.job_id, spec.user_id, spec.group_id, spec.node_count, spec.priority_weight)
        self.servers: list[int] = []
        self.started = False
        self.stopped = False
        self.start_time = None
        self.end_time = None        # stopped issuing
        self.finish_time = None     # last operation completed
        self.first_completion = None
        self.live_streams = 0
        self.in_flight = 0


class Stream:
    __slots__ = ("job", "idx", "ops", "path", "server_ids", "budget", "issued_bytes", "outstanding", "op")

    def __init__(self, job: Job, idx, ops, path, server_ids, budget):
        self.job = job
        self.idx = idx
        self.ops = ops
        self.path = path
        self.server_ids = server_ids
        self.budget = budget
        self.issued_bytes = 0
        self.outstanding = 0
        self.op = None


@dataclass
class Trace:
    """Raw output of a run, consumed by :func:`collect_metrics`."""

    job_ids: list
    job_meta: dict               # job_id -> (user_id, group_id, node_count)
    n_servers: int
    window_us: int
    warmup_us: int
    end_us: int
    capacity_bps: float          # per server
    max_request_bytes: int
    lambda_us: Optional[int] = None
    comp_time: list = field(default_factory=list)
    comp_job: list = field(default_factory=list)
    comp_server: list = field(default_factory=list)
    comp_bytes: list = field(default_factory=list)
    job_start: dict = field(default_factory=dict)
    job_end: dict = field(default_factory=dict)
    job_finish: dict = field(default_factory=dict)
    first_completion: dict = field(default_factory=dict)
    episodes: list = field(default_factory=list)   # (became_inconsistent_us, consistent_again_us or None)
    issued: int = 0
    completed: int = 0
    issued_bytes: int = 0
    in_flight: int = 0
    throttled: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)  # (t_us, server, {job: probability})
    requests: Optional[list] = None
    store: Optional[FileStore] = None

    def record(self, t, job_idx, server, nbytes):
        self.comp_time.append(t)
        self.comp_job.append(job_idx)
        self.comp_server.append(server)
        self.comp_bytes.append(nbytes)


class Simulation:
    def __init__(self, cfg: SimConfig, keep_requests=False):
        self.cfg = cfg
        self.keep_requests = keep_requests
        self.heap = []
        self._seq = 0
        self._req_id = 0
        self.now = 0
        self.end_us = _us(cfg.duration)
        self.window_us = _us(cfg.window)
        self.bw = cfg.per_worker_bandwidth
        self.overhead = int(math.ceil(cfg.per_request_overhead_us))
        self.servers = [Server(i, cfg) for i in range(cfg.n_servers)]
        self.jobs = [Job(i, spec) for i, spec in enumerate(cfg.jobs)]
        self._owner = {}
        self._dirty = False
        self._consistent = True
        self._stop = False
        self.store = FileStore(cfg.n_servers, stripe_size=cfg.stripe_size,
                               stripe_count=cfg.n_servers if cfg.placement == "all-servers" else 1) \
            if cfg.filestore else None
        self.trace = Trace(
            job_ids=[j.job_id for j in cfg.jobs],
            job_meta={j.job_id: (j.user_id, j.group_id, j.node_count) for j in cfg.jobs},
            n_servers=cfg.n_servers,
            window_us=self.window_us,
            warmup_us=_us(cfg.warmup),
            end_us=self.end_us,
            capacity_bps=cfg.workers_per_server * cfg.per_worker_bandwidth,
            max_request_bytes=max(j.block_bytes for j in cfg.jobs),
            lambda_us=_us(cfg.lambda_ms / 1000) if cfg.lambda_ms else None,
            requests=[] if keep_requests else None,
            store=self.store,
        )
        self._make_dispatchers()

    # -- setup

    def service_us(self, nbytes) -> int:
        return self.overhead + int(math.ceil(nbytes * US / self.bw))

    def capacity_rps(self) -> float:
        """Requests per second one server completes at the largest request size."""
        return self.cfg.workers_per_server * US / self.service_us(self.trace.max_request_bytes)

    def tbf_rates(self) -> dict:
        rate = self.cfg.tbf_rate
        if isinstance(rate, dict):
            return dict(rate)
        if rate is None:
            rate = self.cfg.tbf_load_factor * self.capacity_rps() / len(self.jobs)
        return {j.spec.job_id: float(rate) for j in self.jobs}

    def _make_dispatchers(self):
        cfg = self.cfg
        kind = cfg.scheduler
        for s in self.servers:
            if kind == "tokens":
                s.dispatcher = TokenDispatcher(s, cfg.policy_spec)
            elif kind == "fifo":
                s.dispatcher = FifoDispatcher()
            elif kind == "gift":
                s.dispatcher = GiftDispatcher(_us(cfg.gift_mu))
            else:
                rates = self.tbf_rates()
                st = TbfState(rates={}, caps={}, max_compensation=cfg.tbf_max_compensation)
                for k in sorted(rates):
                    st.add_job(k, rates[k], rates[k] * cfg.tbf_cap_s)
                s.dispatcher = TbfDispatcher(st)

    def push(self, t, kind, a=None, b=None):
        self._seq += 1
        heapq.heappush(self.heap, (t, self._seq, kind, a, b))

    # -- main loop

    def run(self) -> Trace:
        cfg = self.cfg
        for j in self.jobs:
            self.push(_us(j.spec.start_offset), JOB_START, j)
        hb = _us(cfg.heartbeat_interval)
        for s in self.servers:
            self.push(hb, EXPIRE, s)
        if self.trace.lambda_us:
            self.push(self.trace.lambda_us, SYNC)
        if cfg.scheduler == "tbf":
            dt = _us(cfg.tbf_refill_ms / 1000)
            for s in self.servers:
                self.push(dt, REFILL, s, dt)
        self.push(self.window_us, WINDOW)

        heap = self.heap
        handlers = {
            COMPLETE: self._on_complete, JOB_START: self._on_start, JOB_STOP: self._on_stop,
            HEARTBEAT: self._on_heartbeat, EXPIRE: self._on_expire, SYNC: self._on_sync,
            REFILL: self._on_refill, WINDOW: self._on_window,
        }
        while heap and not self._stop:
            t, _, kind, a, b = heapq.heappop(heap)
            if t >= self.end_us:
                break
            self.now = t
            handlers[kind](t, a, b)
            if self._dirty and (not heap or heap[0][0] != t):
                self._check_consistency(t)
        return self._finish()

    def _finish(self) -> Trace:
        tr = self.trace
        if self._stop:
            tr.end_us = self.now
        for j in self.jobs:
            k = j.spec.job_id
            if j.start_time is not None:
                tr.job_start[k] = j.start_time
                tr.job_end[k] = j.end_time
                tr.job_finish[k] = j.finish_time
                tr.first_completion[k] = j.first_completion
        tr.in_flight = tr.issued - tr.completed
        tr.throttled = {s.sid: s.throttled for s in self.servers}
        return tr

    # -- clients

    def _route(self, stream: Stream, kind, path, offset, length):
        if kind == "stat":
            allowed = stream.job.spec.servers
            return [(place(path, self.cfg.n_servers, 1, allowed)[0], 0)]
        ids = stream.server_ids
        if length == 0 or len(ids) == 1:
            return [(ids[0], length)]
        return sorted(bytes_per_server(ids, self.cfg.stripe_size, offset, length).items())

    def _issue(self, stream: Stream, t):
        job = stream.job
        if job.stopped or (stream.budget is not None and stream.issued_bytes >= stream.budget):
            self._stream_done(stream, t)
            return
        op = next(stream.ops)
        kind, path, offset, length = op
        stream.op = op
        stream.issued_bytes += length
        route = self._route(stream, kind, path, offset, length)
        stream.outstanding = len(route)
        job.in_flight += 1
        tr = self.trace
        spec = job.spec
        for sid, n in route:
            self._req_id += 1
            req = IORequest(self._req_id, spec.job_id, spec.user_id, spec.group_id, kind, path,
                            offset, n, t, server_id=sid)
            self._owner[self._req_id] = stream
            self.servers[sid].qs.enqueue(req)
            tr.issued += 1
            tr.issued_bytes += n
        for sid, _ in route:
            self._dispatch(self.servers[sid], t)

    def _stream_done(self, stream, t):
        job = stream.job
        job.live_streams -= 1
        if job.live_streams == 0:
            job.finish_time = t
            if not job.stopped:
                job.stopped = True
                job.end_time = t
            if self.cfg.end_on_completion and all(
                j.finish_time is not None for j in self.jobs if j.spec.bytes_per_proc is not None
            ):
                self._stop = True

    def _apply_to_store(self, stream: Stream):
        kind, path, offset, length = stream.op
        store = self.store
        if kind == "open":
            store.makedirs(path.rsplit("/", 1)[0])
            store.create(path, exist_ok=True)
        elif kind == "write":
            store.write_range(path, offset, bytes((stream.idx % 251,)) * length)
        elif kind == "read":
            store.read_range(path, offset, length)
        elif kind == "stat":
            try:
                store.stat(path)
            except FileNotFoundError:
                pass

    # -- servers

    def _dispatch(self, server: Server, t):
        qs = server.qs
        disp = server.dispatcher
        while server.free and qs.total:
            try:
                req = disp.select(qs, t)
            except Throttled:
                server.throttled += 1
                return
            server.free -= 1
            req.dispatch_time = t
            self.push(t + self.service_us(req.length), COMPLETE, server, req)

    def _on_complete(self, t, server: Server, req: IORequest):
        server.free += 1
        req.completion_time = t
        stream = self._owner.pop(req.request_id)
        job = stream.job
        tr = self.trace
        tr.completed += 1
        tr.record(t, job.idx, server.sid, req.length)
        if tr.requests is not None:
            tr.requests.append(req)
        stream.outstanding -= 1
        if stream.outstanding == 0:
            job.in_flight -= 1
            if job.first_completion is None:
                job.first_completion = t
            if self.store is not None:
                self._apply_to_store(stream)
            if job.stopped and job.in_flight == 0 and job.spec.bytes_per_proc is None:
                job.finish_time = t
            self._issue(stream, t)
        self._dispatch(server, t)

    def _heartbeat(self, job: Job, t):
        for sid in job.servers:
            s = self.servers[sid]
            s.table = apply_heartbeat(s.table, replace(job.info, servers=frozenset((sid,))), t)
        self._dirty = True

    def _on_start(self, t, job: Job, _):
        spec = job.spec
        cfg = self.cfg
        allowed = tuple(spec.servers) if spec.servers is not None else tuple(range(cfg.n_servers))
        streams = []
        servers = set()
        budget = None if spec.bytes_per_proc is None else spec.bytes_per_proc / spec.queue_depth
        for i in range(spec.n_streams):
            path = stream_path(spec, i)
            if cfg.placement == "all-servers":
                ids = place(path, cfg.n_servers, len(allowed), allowed)
                servers.update(ids)
            else:
                ids = place(path, cfg.n_servers, 1, allowed)
                servers.add(ids[0])
            streams.append(Stream(job, i, operations(spec, i, cfg.seed), path, ids, budget))
        if spec.pattern == "iops_stat":
            servers = set(allowed)
        job.servers = sorted(servers)
        job.started = True
        job.start_time = t
        job.live_streams = len(streams)
        self._heartbeat(job, t)
        self.push(t + _us(cfg.heartbeat_interval), HEARTBEAT, job)
        if spec.run_length is not None:
            self.push(t + _us(spec.run_length), JOB_STOP, job)
        for st in streams:
            self._issue(st, t)

    def _on_stop(self, t, job: Job, _):
        if not job.stopped:
            job.stopped = True
            job.end_time = t
            if job.in_flight == 0:
                job.finish_time = t

    def _on_heartbeat(self, t, job: Job, _):
        if job.stopped:
            return
        self._heartbeat(job, t)
        self.push(t + _us(self.cfg.heartbeat_interval), HEARTBEAT, job)

    def _on_expire(self, t, server: Server, _):
        before = server.table
        server.table = expire_inactive(before, t, _us(self.cfg.timeout))
        if server.table is not before:
            self._dirty = True
            for k, info in server.table.entries.items():
                if not info.active and k in server.qs and not server.qs.queues[k]:
                    server.qs.drop_queue(k)
        self.push(t + _us(self.cfg.heartbeat_interval), EXPIRE, server)

    def _on_sync(self, t, *_):
        handle_sync(self.servers, t)
        self._dirty = True
        self.push(t + self.trace.lambda_us, SYNC)

    def _on_refill(self, t, server: Server, dt):
        tbf_refill(server.dispatcher.state, dt / US, server.qs)
        self._dispatch(server, t)
        self.push(t + dt, REFILL, server, dt)

    def _on_window(self, t, *_):
        if self.cfg.scheduler == "tokens":
            for s in self.servers:
                s.dispatcher.refresh()
                a = s.dispatcher.assignment
                self.trace.snapshots.append((t, s.sid, dict(a.probabilities) if a else {}))
        self.push(t + self.window_us, WINDOW)

    # -- global fairness bookkeeping

    def _check_consistency(self, t):
        self._dirty = False
        if self.cfg.scheduler != "tokens":
            return
        policy = self.cfg.policy_spec
        merged = merge_tables([s.table for s in self.servers])
        try:
            target = compute_assignment(policy, merged).probabilities
        except NoActiveJobs:
            target = {}
        consistent = True
        for s in self.servers:
            try:
                local = compute_assignment(policy, s.table).probabilities
            except NoActiveJobs:
                local = {}
            keys = set(local) | set(target)
            if any(abs(local.get(k, 0.0) - target.get(k, 0.0)) > ASSIGNMENT_TOL for k in keys):
                consistent = False
                break
        if consistent != self._consistent:
            if consistent:
                start, _ = self.trace.episodes[-1]
                self.trace.episodes[-1] = (start, t)
            else:
                self.trace.episodes.append((t, None))
            self._consistent = consistent


def simulate(cfg: SimConfig, keep_requests=False) -> Trace:
    return Simulation(cfg, keep_requests).run()
