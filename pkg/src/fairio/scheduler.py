"""Per-job request queues and the statistical-token dispatcher.

A worker draws ``u`` uniformly from [0, 1) and services the head of the queue
whose segment contains ``u``. Segments are laid out over the jobs that
currently have pending requests, in sorted job-id order, after renormalizing
their probabilities; idle jobs thereby cede their share to busy ones.

The default random source is :class:`random.Random` (MT19937), whose output
for a given integer or string seed is stable across platforms and Python
versions, so dispatch traces replay bit-for-bit.
"""
from __future__ import annotations

import bisect
import csv
import random
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import NothingToDispatch
from .policy import as_weights

METADATA_KINDS = frozenset({"open", "close", "stat", "readdir", "seek"})
DATA_KINDS = frozenset({"read", "write"})
KINDS = METADATA_KINDS | DATA_KINDS


@dataclass(slots=True)
class IORequest:
    request_id: int
    job_id: str
    user_id: str
    group_id: str
    kind: str
    path: str
    offset: int
    length: int
    arrival_time: int
    completion_time: Optional[int] = None
    dispatch_time: Optional[int] = None
    server_id: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown request kind {self.kind!r}")
        if (self.length == 0) != (self.kind in METADATA_KINDS):
            raise ValueError(f"{self.kind} request with length {self.length}")


class QueueSet:
    """FIFO request queues keyed by job id."""

    def __init__(self):
        self.queues: dict[str, deque] = {}
        self.order: list[str] = []  # sorted job ids, kept for the segment layout
        self.total = 0

    def __len__(self):
        return self.total

    def __contains__(self, job_id):
        return job_id in self.queues

    @property
    def pending_count(self) -> dict:
        return {k: len(q) for k, q in self.queues.items()}

    def pending_jobs(self) -> list[str]:
        return [k for k in self.order if self.queues[k]]

    def enqueue(self, req: IORequest) -> "QueueSet":
        q = self.queues.get(req.job_id)
        if q is None:
            q = self.queues[req.job_id] = deque()
            bisect.insort(self.order, req.job_id)
        if q and q[-1].arrival_time > req.arrival_time:
            raise ValueError(f"request {req.request_id} arrives before the tail of its queue")
        q.append(req)
        self.total += 1
        return self

    def pop(self, job_id) -> IORequest:
        req = self.queues[job_id].popleft()
        self.total -= 1
        return req

    def head(self, job_id) -> Optional[IORequest]:
        q = self.queues.get(job_id)
        return q[0] if q else None

    def drop_queue(self, job_id):
        """Remove an empty queue, e.g. after its job expired."""
        if self.queues.get(job_id):
            raise ValueError(f"queue {job_id!r} still has pending requests")
        if job_id in self.queues:
            del self.queues[job_id]
            self.order.remove(job_id)


def enqueue(qs: QueueSet, req: IORequest) -> QueueSet:
    return qs.enqueue(req)


def draw_queue(assignment, qs: QueueSet, u: float) -> str:
    """Pick the job whose renormalized segment contains ``u``.

    Only jobs with pending requests take part. If none of them carries any
    probability (their heartbeats have not been seen yet) they split [0, 1)
    equally, so pending work is never stranded.
    """
    weights = as_weights(assignment)
    pending = qs.pending_jobs()
    if not pending:
        raise NothingToDispatch()
    ws = [weights.get(k, 0.0) for k in pending]
    total = sum(ws)
    if total <= 0.0:
        ws = [1.0] * len(pending)
        total = float(len(pending))
    target = u * total
    acc = 0.0
    for k, w in zip(pending, ws):
        acc += w
        if target < acc:
            return k
    # u * total can round up to the last boundary
    return next(k for k, w in zip(reversed(pending), reversed(ws)) if w > 0)


def next_request(qs: QueueSet, assignment, rng: random.Random) -> IORequest:
    job = draw_queue(assignment, qs, rng.random())
    return qs.pop(job)


def fifo_next(qs: QueueSet) -> IORequest:
    """Globally earliest arrival across all queues, ties by request id."""
    best = None
    for k in qs.order:
        q = qs.queues[k]
        if q and (best is None or (q[0].arrival_time, q[0].request_id) < best[0]):
            best = ((q[0].arrival_time, q[0].request_id), k)
    if best is None:
        raise NothingToDispatch()
    return qs.pop(best[1])


TRACE_COLUMNS = ("request_id", "job_id", "kind", "bytes", "arrival_time", "dispatch_time", "completion_time")


def write_trace_csv(requests: Iterable[IORequest], f):
    """Write a dispatch trace, one row per request, times in microseconds."""
    w = csv.writer(f, lineterminator="\n")
    w.writerow(TRACE_COLUMNS + ("server_id",))
    for r in requests:
        w.writerow((r.request_id, r.job_id, r.kind, r.length, r.arrival_time,
                    "" if r.dispatch_time is None else r.dispatch_time,
                    "" if r.completion_time is None else r.completion_time, r.server_id))
