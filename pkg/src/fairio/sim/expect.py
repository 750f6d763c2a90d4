"""Self-checks declared in a scenario file."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .metrics import Metrics, run


@dataclass
class Outcome:
    name: str
    kind: str
    passed: bool
    observed: float
    expected: str

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name}: {self.kind} = {self.observed:.6g} (expected {self.expected})"


def _bounds(e):
    lo, hi = e.get("min", -math.inf), e.get("max", math.inf)
    parts = []
    if "min" in e:
        parts.append(f">= {lo:g}")
    if "max" in e:
        parts.append(f"<= {hi:g}")
    return lo, hi, " and ".join(parts)


def evaluate(e: dict, m: Metrics, config, cache=None) -> Outcome:
    kind = e["kind"]
    phase = e.get("phase", "sharing")
    if kind == "ratio":
        obs = m.ratio(e["numerator"], e["denominator"], phase)
        ok = abs(obs - e["target"]) <= e["rel_tol"] * abs(e["target"])
        exp = f"{e['target']:g} +/- {100 * e['rel_tol']:g}%"
    elif kind == "share":
        obs = m.share(e["entity"], phase)
        ok = abs(obs - e["target"]) <= e["abs_tol"]
        exp = f"{e['target']:g} +/- {e['abs_tol']:g}"
    elif kind == "slowdown":
        job = e["job"]
        key = ("exclusive", job)
        if cache is None or key not in cache:
            excl = run(config.only_jobs({job}))
            if cache is not None:
                cache[key] = excl
        else:
            excl = cache[key]
        shared_t, excl_t = m.slowdown_time(job), excl.slowdown_time(job)
        obs = shared_t / excl_t if shared_t is not None and excl_t else math.inf
        lo, hi, exp = _bounds(e)
        ok = lo <= obs <= hi
    elif kind == "convergence":
        lam = config.lambda_ms / 1000
        delay = m.time_to_global_fairness
        obs = delay / lam
        ok = obs <= e["max_lambdas"]
        exp = f"<= {e['max_lambdas']:g} lambda"
    elif kind == "utilization":
        obs = m.utilization(e.get("server"))
        lo, hi, exp = _bounds(e)
        ok = lo <= obs <= hi
    else:  # rejected by the schema
        raise ValueError(kind)
    return Outcome(e["name"], kind, bool(ok), float(obs), exp)


def evaluate_all(expectations, m: Metrics, config) -> list[Outcome]:
    cache = {}
    return [evaluate(e, m, config, cache) for e in expectations]
