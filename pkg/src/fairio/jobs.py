"""Job status tables kept by each server.

Tables are values: every mutating operation returns a new table and leaves
its input untouched, so tables can be shared between simulated servers or
threads without locking.
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

from .errors import IntegrityError

ACTIVE = "active"
INACTIVE = "inactive"

_IMMUTABLE = ("user_id", "group_id", "node_count")


@dataclass(frozen=True)
class JobInfo:
    """One row of a job status table.

    ``servers`` records which servers have received heartbeats from the job.
    It is unioned on merge and lets a server scale a job's share by the
    number of servers the job is spread over.
    """

    job_id: str
    user_id: str
    group_id: str
    node_count: int
    priority_weight: float = 1.0
    status: str = ACTIVE
    last_heartbeat: int = 0
    servers: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.node_count) != self.node_count or self.node_count < 1:
            raise ValueError(f"job {self.job_id}: node_count must be a positive integer")
        if not self.priority_weight > 0:
            raise ValueError(f"job {self.job_id}: priority_weight must be > 0")
        if self.status not in (ACTIVE, INACTIVE):
            raise ValueError(f"job {self.job_id}: unknown status {self.status!r}")

    @property
    def active(self) -> bool:
        return self.status == ACTIVE


@dataclass(frozen=True)
class JobStatusTable:
    entries: Mapping[str, JobInfo] = field(default_factory=dict)
    epoch: int = 0

    def __len__(self):
        return len(self.entries)

    def __contains__(self, job_id):
        return job_id in self.entries

    def __getitem__(self, job_id) -> JobInfo:
        return self.entries[job_id]

    def active_jobs(self) -> list[JobInfo]:
        return [self.entries[k] for k in sorted(self.entries) if self.entries[k].active]

    def jobs_of_user(self, user_id) -> list[JobInfo]:
        return [j for j in self.entries.values() if j.user_id == user_id]

    def jobs_of_group(self, group_id) -> list[JobInfo]:
        return [j for j in self.entries.values() if j.group_id == group_id]

    @classmethod
    def from_jobs(cls, jobs: Iterable[JobInfo], epoch=0) -> "JobStatusTable":
        entries = {}
        for job in jobs:
            if job.job_id in entries:
                raise IntegrityError(f"duplicate job id {job.job_id!r}")
            entries[job.job_id] = job
        return cls(entries, epoch)


def _check_immutable(old: JobInfo, new: JobInfo):
    for attr in _IMMUTABLE:
        if getattr(old, attr) != getattr(new, attr):
            raise IntegrityError(
                f"job {new.job_id!r}: {attr} differs ({getattr(old, attr)!r} vs {getattr(new, attr)!r})"
            )


def apply_heartbeat(table: JobStatusTable, job: JobInfo, now: int) -> JobStatusTable:
    """Insert or refresh ``job``; it becomes active with ``last_heartbeat = now``."""
    entries = dict(table.entries)
    old = entries.get(job.job_id)
    servers = job.servers
    if old is not None:
        _check_immutable(old, job)
        servers = old.servers | servers
    entries[job.job_id] = replace(job, status=ACTIVE, last_heartbeat=now, servers=servers)
    return JobStatusTable(entries, table.epoch + 1)


def expire_inactive(table: JobStatusTable, now: int, timeout: int) -> JobStatusTable:
    """Mark active jobs whose last heartbeat is older than ``timeout`` inactive.

    The epoch only moves when some entry changed, so callers can use it to
    decide whether assignments need recomputing.
    """
    if not timeout > 0:
        raise ValueError("timeout must be positive")
    changed = {
        k: replace(j, status=INACTIVE)
        for k, j in table.entries.items()
        if j.active and now - j.last_heartbeat > timeout
    }
    if not changed:
        return table
    entries = dict(table.entries)
    entries.update(changed)
    return JobStatusTable(entries, table.epoch + 1)


def _merge_entry(a: JobInfo, b: JobInfo) -> JobInfo:
    _check_immutable(a, b)
    # total order on (heartbeat, weight) keeps the merge commutative on ties
    latest = a if (a.last_heartbeat, a.priority_weight) >= (b.last_heartbeat, b.priority_weight) else b
    status = ACTIVE if (a.active or b.active) else INACTIVE
    return replace(latest, status=status, servers=a.servers | b.servers)


def merge_tables(tables: Iterable[JobStatusTable]) -> JobStatusTable:
    """All-gather merge of several servers' tables.

    Entries are unioned by job id; the latest heartbeat wins, a job is active
    if any input has it active. Commutative, associative and idempotent on the
    entries; the epoch is one past the largest input epoch.
    """
    tables = list(tables)
    if not tables:
        raise ValueError("merge_tables needs at least one table")
    entries: dict[str, JobInfo] = {}
    for t in tables:
        for k, job in t.entries.items():
            entries[k] = job if k not in entries else _merge_entry(entries[k], job)
    return JobStatusTable(entries, max(t.epoch for t in tables) + 1)


# -- line-oriented text form -------------------------------------------------

COLUMNS = ("job_id", "user_id", "group_id", "node_count", "priority_weight", "status", "last_heartbeat")


def _fmt_num(x):
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def format_table(table: JobStatusTable) -> str:
    out = io.StringIO()
    out.write("# " + " ".join(COLUMNS) + "\n")
    for k in sorted(table.entries):
        j = table.entries[k]
        row = [j.job_id, j.user_id, j.group_id, str(j.node_count), _fmt_num(j.priority_weight),
               j.status, str(j.last_heartbeat)]
        if j.servers:
            row.append(",".join(str(s) for s in sorted(j.servers)))
        out.write(" ".join(row) + "\n")
    return out.getvalue()


def parse_table(text: str) -> JobStatusTable:
    """Parse the whitespace-separated table format.

    Columns after ``node_count`` are optional and default to weight 1, active,
    heartbeat 0. An eighth column lists server ids, comma separated.
    """
    jobs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not 4 <= len(parts) <= 8:
            raise ValueError(f"line {lineno}: expected 4-8 fields, got {len(parts)}")
        try:
            node_count = int(parts[3])
            weight = float(parts[4]) if len(parts) > 4 else 1.0
            status = parts[5] if len(parts) > 5 else ACTIVE
            hb = int(parts[6]) if len(parts) > 6 else 0
            servers = frozenset(int(s) for s in parts[7].split(",")) if len(parts) > 7 else frozenset()
            jobs.append(JobInfo(parts[0], parts[1], parts[2], node_count, weight, status, hb, servers))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    try:
        return JobStatusTable.from_jobs(jobs)
    except IntegrityError as exc:
        raise ValueError(str(exc)) from None


def load_table(path) -> JobStatusTable:
    with open(path) as f:
        return parse_table(f.read())
