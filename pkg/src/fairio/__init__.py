"""Hierarchical fair-share I/O scheduling for shared burst buffers."""
from .errors import (ConfigError, FairIOError, IntegrityError, NoActiveJobs, NothingToDispatch,
                     PolicyParseError, Throttled)
from .jobs import JobInfo, JobStatusTable, apply_heartbeat, expire_inactive, merge_tables
from .policy import PolicySpec, TokenAssignment, build_transition_matrices, compute_assignment, parse_policy
from .scheduler import IORequest, QueueSet, draw_queue, enqueue, next_request

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FairIOError", "IORequest", "IntegrityError", "JobInfo", "JobStatusTable",
    "NoActiveJobs", "NothingToDispatch", "PolicyParseError", "PolicySpec", "QueueSet", "Throttled",
    "TokenAssignment", "apply_heartbeat", "build_transition_matrices", "compute_assignment",
    "draw_queue", "enqueue", "expire_inactive", "merge_tables", "next_request", "parse_policy",
]
