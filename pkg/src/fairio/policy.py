"""Sharing policies and the statistical token assignment.

A policy is an ordered list of sharing levels, e.g. ``group -> user -> size``.
Each level contributes one row-stochastic transition matrix whose rows are
the scopes of the previous level and whose columns are that level's
entities; the product of the chain gives each job's probability of being
picked by a worker's uniform draw.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import NoActiveJobs, PolicyParseError
from .jobs import JobInfo, JobStatusTable

LEVEL_KINDS = ("group", "user", "job", "size", "priority")
LEAF_KINDS = ("job", "size", "priority")
ROOT = "*"

_RANK = {"group": 0, "user": 1, "job": 2, "size": 2, "priority": 2}


@dataclass(frozen=True)
class PolicySpec:
    levels: tuple

    @property
    def depth(self):
        return len(self.levels)

    def __str__(self):
        return "-then-".join(self.levels) + "-fair"


def parse_policy(text: str) -> PolicySpec:
    """Parse names like ``size-fair``, ``user-then-size-fair`` or ``group-user-size-fair``.

    A trailing ``group`` or ``user`` level gets an implicit ``job`` leaf.
    """
    if not text or not text.strip():
        raise PolicyParseError("empty policy")
    name = text.strip().lower()
    if not name.endswith("-fair"):
        raise PolicyParseError(f"policy {text!r} must end with '-fair'", token=name)
    body = name[: -len("-fair")]
    tokens = re.split(r"-(?:then-)?", body)
    levels = []
    for tok in tokens:
        if tok not in LEVEL_KINDS:
            raise PolicyParseError(f"unknown level kind {tok!r}", token=tok)
        if tok in levels:
            raise PolicyParseError(f"repeated level kind {tok!r}", token=tok)
        if levels and _RANK[tok] <= _RANK[levels[-1]]:
            if levels[-1] in LEAF_KINDS:
                raise PolicyParseError(f"{tok!r} cannot follow leaf level {levels[-1]!r}", token=tok)
            raise PolicyParseError(f"{tok!r} cannot follow {levels[-1]!r}", token=tok)
        levels.append(tok)
    if levels[-1] not in LEAF_KINDS:
        levels.append("job")
    return PolicySpec(tuple(levels))


@dataclass
class TransitionMatrix:
    kind: str
    rows: list
    cols: list
    values: np.ndarray

    def labels(self, which="cols"):
        return ["/".join(p) if p else ROOT for p in getattr(self, which)]


def _entity(kind: str, job: JobInfo) -> str:
    if kind == "group":
        return job.group_id
    if kind == "user":
        return job.user_id
    return job.job_id


def _local_weight(kind: str, job: JobInfo) -> float:
    if kind == "size":
        return float(job.node_count)
    if kind == "priority":
        return float(job.priority_weight)
    return 1.0


def build_transition_matrices(policy: PolicySpec, table: JobStatusTable) -> list[TransitionMatrix]:
    """One matrix per policy level over the active jobs of ``table``.

    Scopes and entities are tuples of entity ids (the path from the root), so
    the same user id under two groups is two distinct entities.
    """
    jobs = table.active_jobs()
    if not jobs:
        raise NoActiveJobs()
    matrices = []
    rows = [()]
    paths = {j.job_id: () for j in jobs}
    for kind in policy.levels:
        children: dict[tuple, dict[tuple, float]] = {r: {} for r in rows}
        for j in jobs:
            parent = paths[j.job_id]
            child = parent + (_entity(kind, j),)
            # a non-leaf entity's weight is 1; leaf weights come from the job
            children[parent][child] = _local_weight(kind, j)
            paths[j.job_id] = child
        cols = []
        values = np.zeros((len(rows), sum(len(c) for c in children.values())))
        for i, r in enumerate(rows):
            kids = sorted(children[r])
            total = sum(children[r].values())
            for c in kids:
                values[i, len(cols)] = children[r][c] / total
                cols.append(c)
        matrices.append(TransitionMatrix(kind, list(rows), cols, values))
        rows = cols
    return matrices


@dataclass
class TokenAssignment:
    probabilities: dict
    source_epoch: int = 0

    def __getitem__(self, job_id):
        return self.probabilities[job_id]

    def get(self, job_id, default=0.0):
        return self.probabilities.get(job_id, default)

    def segments(self, job_ids=None):
        """Contiguous ``(job_id, lo, hi)`` segments of [0, 1) in sorted job order."""
        ids = sorted(self.probabilities if job_ids is None else job_ids)
        out, lo = [], 0.0
        for k in ids:
            hi = lo + self.probabilities.get(k, 0.0)
            out.append((k, lo, hi))
            lo = hi
        return out


def chain_product(matrices: list[TransitionMatrix]) -> np.ndarray:
    vec = np.ones((1, 1))
    for m in matrices:
        vec = vec @ m.values
    return vec[0]


def compute_assignment(policy: PolicySpec, table: JobStatusTable) -> TokenAssignment:
    matrices = build_transition_matrices(policy, table)
    vec = chain_product(matrices)
    probs = {k: 0.0 for k in table.entries}
    for path, p in zip(matrices[-1].cols, vec):
        probs[path[-1]] = float(p)
    return TokenAssignment(probs, table.epoch)


def as_weights(assignment) -> Mapping:
    return assignment.probabilities if isinstance(assignment, TokenAssignment) else assignment
