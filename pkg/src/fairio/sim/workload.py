"""Benchmark client processes as streams of I/O operations.

Each stream is one synchronous client: it issues its next operation only
after the previous one completed. A job with ``queue_depth > 1`` keeps that
many streams per process.
"""
from __future__ import annotations

import random

from .config import WorkloadSpec


def stream_path(job: WorkloadSpec, stream: int, prefix="/fs") -> str:
    proc, slot = divmod(stream, job.queue_depth)
    suffix = f".{slot}" if job.queue_depth > 1 else ""
    return f"{prefix}/{job.job_id}/p{proc:05d}{suffix}.dat"


def _blocks(kind, path, size, block):
    off = 0
    while off < size:
        n = min(block, size - off)
        yield (kind, path, off, n)
        off += n


def write_read_cycle(path, file_bytes, block_bytes):
    """Write the whole file, read it back, repeat."""
    yield ("open", path, 0, 0)
    while True:
        yield from _blocks("write", path, file_bytes, block_bytes)
        yield from _blocks("read", path, file_bytes, block_bytes)


def iops_write_read(path, file_bytes, block_bytes):
    """Write a small file once, then read it over and over."""
    yield ("open", path, 0, 0)
    yield from _blocks("write", path, file_bytes, block_bytes)
    while True:
        yield from _blocks("read", path, file_bytes, block_bytes)


def iops_stat(dirpath, rng: random.Random):
    """stat() on random file names."""
    while True:
        yield ("stat", f"{dirpath}/f{rng.getrandbits(48):012x}", 0, 0)


def operations(job: WorkloadSpec, stream: int, seed: int, prefix="/fs"):
    path = stream_path(job, stream, prefix)
    if job.pattern == "write_read_cycle":
        return write_read_cycle(path, job.file_bytes, job.block_bytes)
    if job.pattern == "iops_write_read":
        return iops_write_read(path, job.file_bytes, job.block_bytes)
    if job.pattern == "iops_stat":
        return iops_stat(f"{prefix}/{job.job_id}", random.Random(f"{seed}:{job.job_id}:{stream}"))
    raise ValueError(f"unknown pattern {job.pattern!r}")
