"""Simulation config and scenario documents.

Times in the JSON document are in seconds (``*_s``), milliseconds
(``*_ms``) or microseconds (``*_us``) as named; internally everything is
integer microseconds. One MB is 10**6 bytes.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional

import jsonschema

from ..errors import ConfigError, PolicyParseError
from ..policy import PolicySpec, parse_policy

MB = 1_000_000
US = 1_000_000

BASELINES = ("fifo", "gift", "tbf")
PATTERNS = ("write_read_cycle", "iops_stat", "iops_write_read")


def _schema():
    return json.loads(resources.files("fairio.sim").joinpath("scenario.schema.json").read_text())


@dataclass(frozen=True)
class WorkloadSpec:
    job_id: str
    user_id: str
    group_id: str
    node_count: int
    pattern: str = "write_read_cycle"
    file_mb: float = 10.0
    block_mb: Optional[float] = None
    priority_weight: float = 1.0
    procs_per_node: int = 56
    queue_depth: int = 1
    start_offset: float = 0.0
    run_length: Optional[float] = None
    bytes_per_proc: Optional[float] = None
    servers: Optional[tuple] = None

    @property
    def n_streams(self):
        return self.node_count * self.procs_per_node * self.queue_depth

    @property
    def file_bytes(self):
        return int(round(self.file_mb * MB))

    @property
    def block_bytes(self):
        return int(round((self.block_mb or self.file_mb) * MB))


@dataclass(frozen=True)
class SimConfig:
    jobs: tuple
    duration: float
    n_servers: int = 1
    workers_per_server: int = 8
    per_worker_bandwidth: float = 2.5e9
    per_request_overhead_us: float = 10.0
    policy: str = "job-fair"
    lambda_ms: Optional[float] = None
    heartbeat_interval: float = 1.0
    heartbeat_timeout: Optional[float] = None
    seed: int = 0
    window: float = 1.0
    warmup: float = 2.0
    placement: str = "all-servers"
    stripe_size: int = MB
    end_on_completion: bool = False
    filestore: bool = False
    gift_mu: float = 0.5
    tbf_rate: object = None  # tokens/s: number, {job_id: rate}, or None for the load-factor default
    tbf_load_factor: float = 0.8
    tbf_cap_s: float = 1.0
    tbf_refill_ms: float = 10.0
    tbf_max_compensation: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        validate(self)

    @property
    def timeout(self):
        return self.heartbeat_timeout if self.heartbeat_timeout is not None else 10 * self.heartbeat_interval

    @property
    def scheduler(self) -> str:
        """``fifo``, ``gift``, ``tbf`` or ``tokens`` (a policy-driven token dispatcher)."""
        p = self.policy.lower()
        return p if p in BASELINES else "tokens"

    @property
    def policy_spec(self) -> Optional[PolicySpec]:
        if self.scheduler != "tokens":
            return None
        p = self.policy
        # "themis:<policy>" is accepted as an explicit spelling of a policy
        if p.lower().startswith("themis:"):
            p = p.split(":", 1)[1]
        return parse_policy(p)

    def job(self, job_id) -> WorkloadSpec:
        for j in self.jobs:
            if j.job_id == job_id:
                return j
        raise KeyError(job_id)

    def with_policy(self, policy) -> "SimConfig":
        return replace(self, policy=policy)

    def only_jobs(self, job_ids) -> "SimConfig":
        return replace(self, jobs=tuple(j for j in self.jobs if j.job_id in job_ids))


def validate(cfg: SimConfig):
    if not cfg.jobs:
        raise ConfigError("jobs: at least one job required")
    ids = [j.job_id for j in cfg.jobs]
    if len(set(ids)) != len(ids):
        raise ConfigError("jobs: duplicate job_id")
    for name in ("duration", "per_worker_bandwidth", "per_request_overhead_us", "heartbeat_interval",
                 "window", "gift_mu", "tbf_cap_s", "tbf_refill_ms", "tbf_load_factor"):
        if not getattr(cfg, name) > 0:
            raise ConfigError(f"{name}: must be positive")
    if cfg.n_servers < 1 or cfg.workers_per_server < 1:
        raise ConfigError("n_servers and workers_per_server must be >= 1")
    if cfg.lambda_ms is not None and not cfg.lambda_ms > 0:
        raise ConfigError("lambda_ms: must be positive")
    if cfg.placement not in ("all-servers", "hash-disjoint"):
        raise ConfigError(f"placement: unknown mode {cfg.placement!r}")
    try:
        cfg.policy_spec
    except PolicyParseError as exc:
        raise ConfigError(f"policy: {exc}") from None
    for i, j in enumerate(cfg.jobs):
        where = f"jobs[{i}] ({j.job_id})"
        if j.pattern not in PATTERNS:
            raise ConfigError(f"{where}.pattern: unknown pattern {j.pattern!r}")
        if j.run_length is None and j.bytes_per_proc is None:
            raise ConfigError(f"{where}: needs run_length_s or bytes_per_proc")
        if j.run_length is not None and not j.run_length > 0:
            raise ConfigError(f"{where}.run_length_s: must be positive")
        if not j.file_mb > 0 or (j.block_mb is not None and not j.block_mb > 0):
            raise ConfigError(f"{where}.pattern: sizes must be positive")
        if j.node_count < 1 or j.procs_per_node < 1 or j.queue_depth < 1:
            raise ConfigError(f"{where}: counts must be >= 1")
        if j.servers is not None and any(s >= cfg.n_servers or s < 0 for s in j.servers):
            raise ConfigError(f"{where}.servers: server id out of range")
    if isinstance(cfg.tbf_rate, dict):
        missing = set(ids) - set(cfg.tbf_rate)
        if missing:
            raise ConfigError(f"tbf.rate: no rate for jobs {sorted(missing)}")


@dataclass
class Scenario:
    config: SimConfig
    expectations: list = field(default_factory=list)
    source: Optional[dict] = None


def _job_from_doc(d: dict) -> WorkloadSpec:
    pat = d["pattern"]
    file_mb = pat.get("file_mb", 1.0 if pat["type"] == "iops_write_read" else 10.0)
    return WorkloadSpec(
        job_id=d["job_id"],
        user_id=d.get("user_id", d["job_id"]),
        group_id=d.get("group_id", d.get("user_id", d["job_id"])),
        node_count=d["node_count"],
        pattern=pat["type"],
        file_mb=file_mb,
        block_mb=pat.get("block_mb"),
        priority_weight=d.get("priority_weight", 1.0),
        procs_per_node=d.get("procs_per_node", 56),
        queue_depth=d.get("queue_depth", 1),
        start_offset=d.get("start_s", 0.0),
        run_length=d.get("run_length_s"),
        bytes_per_proc=d.get("bytes_per_proc"),
        servers=tuple(d["servers"]) if "servers" in d else None,
    )


def config_from_doc(doc: dict) -> SimConfig:
    gift = doc.get("gift", {})
    tbf = doc.get("tbf", {})
    return SimConfig(
        jobs=tuple(_job_from_doc(j) for j in doc["jobs"]),
        duration=doc["duration_s"],
        n_servers=doc.get("n_servers", 1),
        workers_per_server=doc.get("workers_per_server", 8),
        per_worker_bandwidth=doc.get("per_worker_bandwidth", 2.5e9),
        per_request_overhead_us=doc.get("per_request_overhead_us", 10.0),
        policy=doc.get("policy", "job-fair"),
        lambda_ms=doc.get("lambda_ms"),
        heartbeat_interval=doc.get("heartbeat_interval_s", 1.0),
        heartbeat_timeout=doc.get("heartbeat_timeout_s"),
        seed=doc.get("seed", 0),
        window=doc.get("window_s", 1.0),
        warmup=doc.get("warmup_s", 2.0),
        placement=doc.get("placement", "all-servers"),
        stripe_size=doc.get("stripe_size", MB),
        end_on_completion=doc.get("end_on_completion", False),
        filestore=doc.get("filestore", False),
        gift_mu=gift.get("mu_s", 0.5),
        tbf_rate=tbf.get("rate"),
        tbf_load_factor=tbf.get("load_factor", 0.8),
        tbf_cap_s=tbf.get("cap_s", 1.0),
        tbf_refill_ms=tbf.get("refill_ms", 10.0),
        tbf_max_compensation=tbf.get("max_compensation"),
        name=doc.get("name", ""),
    )


def _check_expectations(exps, cfg: SimConfig):
    ids = {j.job_id for j in cfg.jobs}
    users = {j.user_id for j in cfg.jobs}
    groups = {j.group_id for j in cfg.jobs}

    def entity_ok(e):
        if e.startswith("user:"):
            return e[5:] in users
        if e.startswith("group:"):
            return e[6:] in groups
        return e in ids

    for i, e in enumerate(exps):
        where = f"expectations[{i}] ({e['name']})"
        kind = e["kind"]
        needed = {"ratio": ("numerator", "denominator", "target", "rel_tol"),
                  "share": ("entity", "target", "abs_tol"),
                  "slowdown": ("job",),
                  "convergence": ("max_lambdas",),
                  "utilization": ("min",)}[kind]
        for key in needed:
            if key not in e:
                raise ConfigError(f"{where}: missing field {key!r}")
        for key in ("numerator", "denominator", "entity", "job"):
            if key in e and not entity_ok(e[key]):
                raise ConfigError(f"{where}.{key}: {e[key]!r} is not a declared job/user/group")
        if kind == "slowdown" and "min" not in e and "max" not in e:
            raise ConfigError(f"{where}: slowdown needs 'min' and/or 'max'")
        if kind == "convergence" and cfg.lambda_ms is None:
            raise ConfigError(f"{where}: convergence needs lambda_ms")


def scenario_from_doc(doc: dict) -> Scenario:
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = []
        for err in errors:
            path = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
            msgs.append(f"{path.lstrip('.') or '<root>'}: {err.message}")
        raise ConfigError("; ".join(msgs))
    cfg = config_from_doc(doc)
    exps = copy.deepcopy(doc.get("expectations", []))
    _check_expectations(exps, cfg)
    return Scenario(cfg, exps, doc)


def load_scenario(path) -> Scenario:
    with open(path) as f:
        text = f.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return scenario_from_doc(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
