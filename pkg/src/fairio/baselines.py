"""Simplified comparison schedulers behind the same queue interface.

``gift_*``: interval-based allocation. Every ``mu`` the pending jobs get
equal shares (idle jobs get none); between recomputes the job furthest
below its share of the bytes served in the interval goes next.

``tbf_*``: one token bucket per job, one token per request. Overflow from
idle jobs' buckets is handed to busy jobs in proportion to their rates
(PSSB). Tokens a busy job loses to its cap because the server could not get
to it are owed back as compensation and may be spent on top of the cap
(HTC).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .errors import NothingToDispatch, Throttled
from .scheduler import IORequest, QueueSet

US = 1_000_000


@dataclass
class GiftState:
    mu: int = US // 2  # microseconds
    shares: dict = field(default_factory=dict)
    served: dict = field(default_factory=dict)  # bytes per job since the last recompute
    interval_bytes: int = 0
    last_recompute: Optional[int] = None


def gift_recompute(state: GiftState, qs: QueueSet, now: int) -> GiftState:
    if state.last_recompute is not None:
        if now < state.last_recompute:
            raise ValueError("time went backwards")
        if now - state.last_recompute < state.mu:
            return state
    pending = qs.pending_jobs()
    state.shares = {k: 1.0 / len(pending) for k in pending}
    state.served = {k: 0 for k in pending}
    state.interval_bytes = 0
    state.last_recompute = now
    return state


def gift_deficit(state: GiftState, job_id) -> float:
    return state.shares.get(job_id, 0.0) * state.interval_bytes - state.served.get(job_id, 0)


def gift_next(state: GiftState, qs: QueueSet, rng=None) -> IORequest:
    """Serve the pending job with the largest deficit, FIFO within the job.

    ``rng`` is accepted for interface parity with the other dispatchers; the
    choice is deterministic.
    """
    pending = qs.pending_jobs()
    if not pending:
        raise NothingToDispatch()
    job = min(pending, key=lambda k: (-gift_deficit(state, k), k))
    req = qs.pop(job)
    # zero-byte metadata ops still cost something, otherwise they never move a deficit
    cost = max(req.length, 1)
    state.served[job] = state.served.get(job, 0) + cost
    state.interval_bytes += cost
    return req


@dataclass
class TbfState:
    rates: dict  # tokens per second
    caps: dict
    buckets: dict = field(default_factory=dict)
    compensation: dict = field(default_factory=dict)
    max_compensation: Optional[float] = None
    # ledger
    granted: float = 0.0
    pssb_moved: float = 0.0
    htc_accrued: float = 0.0
    dropped: float = 0.0
    consumed: float = 0.0
    initial: float = 0.0

    @classmethod
    def uniform(cls, job_ids, rate, cap=None, full=True, **kw):
        """Equal rates for ``job_ids``; ``cap`` defaults to one second of tokens."""
        cap = rate if cap is None else cap
        st = cls(rates={}, caps={}, **kw)
        for k in job_ids:
            st.add_job(k, rate, cap, full=full)
        return st

    def add_job(self, job_id, rate, cap=None, full=True):
        if not rate > 0:
            raise ValueError("rates must be positive")
        self.rates[job_id] = float(rate)
        self.caps[job_id] = float(rate if cap is None else cap)
        start = self.caps[job_id] if full else 0.0
        self.buckets[job_id] = start
        self.compensation.setdefault(job_id, 0.0)
        self.initial += start

    def balance(self, job_id) -> float:
        return self.buckets.get(job_id, 0.0) + self.compensation.get(job_id, 0.0)

    def held(self) -> float:
        return sum(self.buckets.values()) + sum(self.compensation.values())


def tbf_refill(state: TbfState, dt: float, qs: QueueSet) -> TbfState:
    """Add ``rate * dt`` tokens per job (``dt`` in seconds)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    spare = 0.0
    jobs = sorted(state.rates)
    busy = [k for k in jobs if qs.head(k) is not None]
    for k in jobs:
        add = state.rates[k] * dt
        state.granted += add
        room = max(state.caps[k] - state.buckets[k], 0.0)
        fill = min(add, room)
        state.buckets[k] += fill
        overflow = add - fill
        if overflow <= 0:
            continue
        if qs.head(k) is not None:
            owed = overflow
            if state.max_compensation is not None:
                owed = min(owed, max(state.max_compensation - state.compensation[k], 0.0))
            state.compensation[k] += owed
            state.htc_accrued += owed
            state.dropped += overflow - owed
        else:
            spare += overflow
    if spare > 0:
        total_rate = sum(state.rates[k] for k in busy)
        given = 0.0
        for k in busy:
            room = max(state.caps[k] - state.buckets[k], 0.0)
            share = min(spare * state.rates[k] / total_rate, room)
            state.buckets[k] += share
            given += share
        state.pssb_moved += given
        state.dropped += spare - given
    return state


def tbf_next(state: TbfState, qs: QueueSet) -> IORequest:
    """Serve the eligible job with the largest balance, ties by job id.

    Compensation is spent before regular tokens.
    """
    pending = qs.pending_jobs()
    if not pending:
        raise NothingToDispatch()
    best, best_bal = None, 0.0
    for k in pending:
        bal = state.balance(k)
        if bal >= 1.0 and bal > best_bal:
            best, best_bal = k, bal
    if best is None:
        raise Throttled()
    comp = state.compensation.get(best, 0.0)
    if comp >= 1.0:
        state.compensation[best] = comp - 1.0
    else:
        state.compensation[best] = 0.0
        state.buckets[best] -= 1.0 - comp
    state.consumed += 1.0
    return qs.pop(best)
