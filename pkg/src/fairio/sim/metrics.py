"""Windowed throughput metrics and their CSV forms.

``windows.csv`` has one row per (window, job); ``summary.csv`` is a long
``scope,entity,metric,value`` table. Both carry ``SCHEMA_VERSION`` (as a
``run`` row in the summary) and format floats with ``repr`` so identical runs
give byte-identical files.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import US
from .engine import Trace

SCHEMA_VERSION = 1
WINDOW_COLUMNS = ("window", "t_start_s", "job_id", "user_id", "group_id", "bytes", "ops", "share")
SUMMARY_COLUMNS = ("scope", "entity", "metric", "value")


@dataclass
class Metrics:
    window_s: float
    n_windows: int
    job_ids: list
    job_meta: dict
    job_bytes: dict            # job -> np.ndarray per window
    job_ops: dict
    server_bytes: dict         # server -> np.ndarray per window
    active: dict               # job -> bool per window (window fully inside the job's run)
    measured: np.ndarray       # windows past warm-up
    capacity_bps: float
    max_request_bytes: int
    job_start: dict = field(default_factory=dict)
    job_end: dict = field(default_factory=dict)
    job_finish: dict = field(default_factory=dict)
    first_completion: dict = field(default_factory=dict)
    episodes: list = field(default_factory=list)
    lambda_s: Optional[float] = None
    throttled: dict = field(default_factory=dict)
    end_s: float = 0.0

    # -- phases

    def n_active(self) -> np.ndarray:
        return np.sum([self.active[k] for k in self.job_ids], axis=0)

    def sharing_windows(self) -> np.ndarray:
        return self.measured & (self.n_active() >= 2)

    def overlap_windows(self) -> np.ndarray:
        return self.measured & (self.n_active() == len(self.job_ids))

    def phase_windows(self, phase="sharing") -> np.ndarray:
        """Windows for ``sharing`` (>= 2 jobs active), ``overlap`` (all jobs active) or ``all``.

        ``sharing`` and ``overlap`` fall back to ``all`` when no window qualifies.
        """
        if phase == "overlap":
            w = self.overlap_windows()
            if w.any():
                return w
        if phase == "sharing":
            w = self.sharing_windows()
            if w.any():
                return w
        return self.measured & (self.n_active() >= 1)

    # -- aggregates

    @property
    def totals(self) -> dict:
        return {k: int(self.job_bytes[k].sum()) for k in self.job_ids}

    @property
    def total_ops(self) -> dict:
        return {k: int(self.job_ops[k].sum()) for k in self.job_ids}

    def members(self, entity: str) -> list:
        if entity.startswith("user:"):
            return [k for k in self.job_ids if self.job_meta[k][0] == entity[5:]]
        if entity.startswith("group:"):
            return [k for k in self.job_ids if self.job_meta[k][1] == entity[6:]]
        if entity not in self.job_bytes:
            raise KeyError(entity)
        return [entity]

    def entity_series(self, entity) -> np.ndarray:
        return np.sum([self.job_bytes[k] for k in self.members(entity)], axis=0)

    def user_totals(self) -> dict:
        users = sorted({m[0] for m in self.job_meta.values()})
        return {u: int(self.entity_series("user:" + u).sum()) for u in users}

    def group_totals(self) -> dict:
        groups = sorted({m[1] for m in self.job_meta.values()})
        return {g: int(self.entity_series("group:" + g).sum()) for g in groups}

    def entity_bytes(self, entity, phase="sharing") -> int:
        return int(self.entity_series(entity)[self.phase_windows(phase)].sum())

    def ratio(self, num, den, phase="sharing") -> float:
        d = self.entity_bytes(den, phase)
        return self.entity_bytes(num, phase) / d if d else math.inf

    def share(self, entity, phase="sharing") -> float:
        w = self.phase_windows(phase)
        total = sum(int(self.job_bytes[k][w].sum()) for k in self.job_ids)
        return self.entity_bytes(entity, phase) / total if total else 0.0

    def window_shares(self, job) -> np.ndarray:
        total = np.sum([self.job_bytes[k] for k in self.job_ids], axis=0).astype(float)
        out = np.zeros(self.n_windows)
        np.divide(self.job_bytes[job], total, out=out, where=total > 0)
        return out

    def share_std(self, job) -> float:
        """Std dev of the job's per-window share over sharing windows where it is active."""
        w = self.sharing_windows() & self.active[job]
        return float(np.std(self.window_shares(job)[w])) if w.any() else 0.0

    def throughput_std(self, job) -> float:
        w = self.sharing_windows() & self.active[job]
        return float(np.std(self.job_bytes[job][w] / self.window_s)) if w.any() else 0.0

    def aggregate_bytes(self) -> int:
        return sum(self.totals.values())

    def utilization(self, server=None) -> float:
        """Bytes moved over byte capacity across measured windows with any active job."""
        w = self.phase_windows("all")
        servers = self.server_bytes if server is None else {server: self.server_bytes[server]}
        cap = self.capacity_bps * self.window_s * int(w.sum()) * len(servers)
        return sum(int(v[w].sum()) for v in servers.values()) / cap if cap else 0.0

    # -- global fairness

    def convergence_delays(self) -> list:
        """Seconds each inconsistency episode lasted (``inf`` if it never ended)."""
        return [((e - s) / US) if e is not None else math.inf for s, e in self.episodes]

    @property
    def time_to_global_fairness(self) -> Optional[float]:
        d = self.convergence_delays()
        return max(d) if d else 0.0

    @property
    def fairness_window(self) -> Optional[int]:
        """First window after which every server agrees with the merged table for good."""
        if not self.episodes:
            return 0
        end = self.episodes[-1][1]
        if end is None:
            return None
        return int(math.ceil(end / US / self.window_s))

    def slowdown_time(self, job) -> Optional[float]:
        if self.job_finish.get(job) is None or self.job_start.get(job) is None:
            return None
        return (self.job_finish[job] - self.job_start[job]) / US


def collect_metrics(trace: Trace) -> Metrics:
    wus = trace.window_us
    n = max(int(math.ceil(trace.end_us / wus)), 1)
    t = np.asarray(trace.comp_time, dtype=np.int64)
    widx = np.minimum(t // wus, n - 1) if len(t) else t
    jobs = np.asarray(trace.comp_job, dtype=np.int64)
    srv = np.asarray(trace.comp_server, dtype=np.int64)
    nbytes = np.asarray(trace.comp_bytes, dtype=np.int64)
    job_bytes, job_ops, active = {}, {}, {}
    starts = np.arange(n) * wus
    for i, k in enumerate(trace.job_ids):
        sel = jobs == i
        job_bytes[k] = np.bincount(widx[sel], weights=nbytes[sel], minlength=n).astype(np.int64)
        job_ops[k] = np.bincount(widx[sel], minlength=n).astype(np.int64)
        s = trace.job_start.get(k)
        e = trace.job_end.get(k)
        if e is None:
            e = trace.end_us
        active[k] = np.zeros(n, bool) if s is None else (starts >= s) & (starts + wus <= e)
    server_bytes = {}
    for sid in range(trace.n_servers):
        sel = srv == sid
        server_bytes[sid] = np.bincount(widx[sel], weights=nbytes[sel], minlength=n).astype(np.int64)
    return Metrics(
        window_s=wus / US,
        n_windows=n,
        job_ids=list(trace.job_ids),
        job_meta=dict(trace.job_meta),
        job_bytes=job_bytes,
        job_ops=job_ops,
        server_bytes=server_bytes,
        active=active,
        measured=(starts >= trace.warmup_us) & (starts + wus <= trace.end_us),
        capacity_bps=trace.capacity_bps,
        max_request_bytes=trace.max_request_bytes,
        job_start=dict(trace.job_start),
        job_end=dict(trace.job_end),
        job_finish=dict(trace.job_finish),
        first_completion=dict(trace.first_completion),
        episodes=list(trace.episodes),
        lambda_s=trace.lambda_us / US if trace.lambda_us else None,
        throttled=dict(trace.throttled),
        end_s=trace.end_us / US,
    )


def run(config, keep_requests=False) -> Metrics:
    from .engine import simulate
    return collect_metrics(simulate(config, keep_requests))


# -- CSV ---------------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_windows_csv(m: Metrics, f):
    w = csv.writer(f, lineterminator="\n")
    w.writerow(WINDOW_COLUMNS)
    shares = {k: m.window_shares(k) for k in m.job_ids}
    for i in range(m.n_windows):
        for k in m.job_ids:
            user, group, _ = m.job_meta[k]
            w.writerow((i, _num(i * m.window_s), k, user, group, int(m.job_bytes[k][i]),
                        int(m.job_ops[k][i]), _num(shares[k][i])))


def summary_rows(m: Metrics, extra=()):
    rows = [("run", "", "schema_version", SCHEMA_VERSION),
            ("run", "", "windows", m.n_windows),
            ("run", "", "end_s", m.end_s),
            ("run", "", "aggregate_bytes", m.aggregate_bytes()),
            ("run", "", "utilization", m.utilization()),
            ("run", "", "sharing_windows", int(m.sharing_windows().sum())),
            ("run", "", "time_to_global_fairness_s", m.time_to_global_fairness),
            ("run", "", "global_fairness_window", m.fairness_window)]
    for sid in sorted(m.server_bytes):
        rows.append(("server", str(sid), "bytes", int(m.server_bytes[sid].sum())))
        rows.append(("server", str(sid), "utilization", m.utilization(sid)))
        rows.append(("server", str(sid), "throttled_attempts", m.throttled.get(sid, 0)))
    for k in m.job_ids:
        user, group, nodes = m.job_meta[k]
        rows += [
            ("job", k, "user_id", user),
            ("job", k, "group_id", group),
            ("job", k, "node_count", nodes),
            ("job", k, "total_bytes", m.totals[k]),
            ("job", k, "total_ops", m.total_ops[k]),
            ("job", k, "sharing_bytes", m.entity_bytes(k, "sharing")),
            ("job", k, "sharing_share", m.share(k, "sharing")),
            ("job", k, "share_std", m.share_std(k)),
            ("job", k, "throughput_std_bps", m.throughput_std(k)),
            ("job", k, "start_s", None if m.job_start.get(k) is None else m.job_start[k] / US),
            ("job", k, "end_s", None if m.job_end.get(k) is None else m.job_end[k] / US),
            ("job", k, "finish_s", None if m.job_finish.get(k) is None else m.job_finish[k] / US),
            ("job", k, "first_completion_s",
             None if m.first_completion.get(k) is None else (m.first_completion[k] - m.job_start[k]) / US),
        ]
    for u, b in m.user_totals().items():
        rows.append(("user", u, "total_bytes", b))
        rows.append(("user", u, "sharing_share", m.share("user:" + u)))
    for g, b in m.group_totals().items():
        rows.append(("group", g, "total_bytes", b))
        rows.append(("group", g, "sharing_share", m.share("group:" + g)))
    rows.extend(extra)
    return rows


def write_summary_csv(m: Metrics, f, extra=()):
    w = csv.writer(f, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for scope, entity, metric, value in summary_rows(m, extra):
        w.writerow((scope, entity, metric, value if isinstance(value, str) else _num(value)))
