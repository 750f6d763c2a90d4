"""Command-line front end.

    fairio policy-eval POLICY TABLE [--show-matrices]
    fairio simulate SCENARIO [--seed N] [--out DIR] [--trace] [--no-plots]
    fairio compare SCENARIO --policies fifo,gift,tbf,themis:job-fair [--out DIR]

Exit codes: 0 success, 1 an expectation failed, 2 bad input.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

from .errors import ConfigError, PolicyParseError
from .jobs import load_table
from .policy import build_transition_matrices, compute_assignment, parse_policy

log = logging.getLogger("fairio")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
COMPARE_COLUMNS = ("policy", "scope", "entity", "metric", "value")


class InputError(Exception):
    pass


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


# -- policy-eval ---------------------------------------------------------------

def cmd_policy_eval(args) -> int:
    try:
        policy = parse_policy(args.policy)
    except PolicyParseError as exc:
        raise InputError(f"policy: {exc}") from None
    try:
        table = load_table(args.table)
    except OSError as exc:
        raise InputError(f"{args.table}: {exc.strerror}") from None
    except ValueError as exc:
        raise InputError(f"{args.table}: {exc}") from None
    assignment = compute_assignment(policy, table)
    out = sys.stdout
    out.write(f"# policy {policy}\n")
    if args.show_matrices:
        for i, m in enumerate(build_transition_matrices(policy, table), 1):
            rows, cols = m.labels("rows"), m.labels("cols")
            out.write(f"# T{i} ({m.kind}) {len(rows)}x{len(cols)}\n")
            w = max(len(c) for c in cols + ["-"])
            out.write("#   " + " ".join(c.rjust(w) for c in cols) + "\n")
            for r, vals in zip(rows, m.values):
                out.write(f"#   {r}: " + " ".join(f"{v:{w}.6g}" for v in vals) + "\n")
    out.write("job_id,probability\n")
    for k in sorted(assignment.probabilities):
        out.write(f"{k},{assignment.probabilities[k]!r}\n")
    return EXIT_OK


# -- simulate ------------------------------------------------------------------

def _load(args):
    from .sim.config import load_scenario
    try:
        sc = load_scenario(args.scenario)
    except OSError as exc:
        raise InputError(f"{args.scenario}: {exc.strerror}") from None
    cfg = sc.config
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "lambda_ms", None) is not None:
        overrides["lambda_ms"] = args.lambda_ms
    if overrides:
        try:
            cfg = replace(cfg, **overrides)
        except ConfigError as exc:
            raise InputError(str(exc)) from None
    return sc, cfg


def _print_summary(m, out):
    out.write(f"aggregate {m.aggregate_bytes() / 1e9:.3f} GB, utilization {m.utilization():.4f}, "
              f"sharing windows {int(m.sharing_windows().sum())}\n")
    for k in m.job_ids:
        out.write(f"  {k}: {m.totals[k] / 1e9:.3f} GB, {m.total_ops[k]} ops, sharing share {m.share(k):.4f}, "
                  f"share std {m.share_std(k):.4f}\n")
    if m.lambda_s:
        out.write(f"  time to global fairness {m.time_to_global_fairness:.6g} s "
                  f"(lambda {m.lambda_s:g} s)\n")


def cmd_simulate(args) -> int:
    from .sim.engine import simulate
    from .sim.expect import evaluate_all
    from .sim.metrics import collect_metrics, write_summary_csv, write_windows_csv

    sc, cfg = _load(args)
    log.debug("simulating %s: %d jobs, policy %s, seed %d", args.scenario, len(cfg.jobs), cfg.policy, cfg.seed)
    trace = simulate(cfg, keep_requests=args.trace)
    m = collect_metrics(trace)
    outcomes = evaluate_all(sc.expectations, m, cfg)
    extra = [("expectation", o.name, o.kind, o.observed) for o in outcomes]
    extra += [("expectation", o.name, "passed", int(o.passed)) for o in outcomes]
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "windows.csv"), "w", newline="") as f:
            write_windows_csv(m, f)
        with open(os.path.join(args.out, "summary.csv"), "w", newline="") as f:
            write_summary_csv(m, f, extra)
        if args.trace:
            from .scheduler import write_trace_csv
            with open(os.path.join(args.out, "trace.csv"), "w", newline="") as f:
                write_trace_csv(trace.requests, f)
        if args.plots:
            from .report import plot_throughput
            plot_throughput(m, os.path.join(args.out, "throughput.png"), cfg.name or str(cfg.policy))
    _print_summary(m, sys.stdout)
    for o in outcomes:
        sys.stdout.write(o.line() + "\n")
    return EXIT_OK if all(o.passed for o in outcomes) else EXIT_FAIL


# -- compare -------------------------------------------------------------------

def _policy_list(text):
    from .sim.config import BASELINES
    names = [p.strip() for p in text.split(",") if p.strip()]
    if len(names) < 2:
        raise InputError("compare needs at least two policies")
    if len(set(names)) != len(names):
        raise InputError("duplicate policy in --policies")
    for p in names:
        if p.lower() in BASELINES:
            continue
        body = p.split(":", 1)[1] if p.lower().startswith("themis:") else p
        try:
            parse_policy(body)
        except PolicyParseError as exc:
            raise InputError(f"unknown policy {p!r}: {exc}") from None
    return names


def compare_rows(results: dict):
    rows = []
    for p, m in results.items():
        rows += [(p, "run", "", "aggregate_bytes", m.aggregate_bytes()),
                 (p, "run", "", "utilization", m.utilization()),
                 (p, "run", "", "time_to_global_fairness_s", m.time_to_global_fairness)]
        for k in m.job_ids:
            fc = m.first_completion.get(k)
            rows += [(p, "job", k, "total_bytes", m.totals[k]),
                     (p, "job", k, "sharing_share", m.share(k)),
                     (p, "job", k, "share_std", m.share_std(k)),
                     (p, "job", k, "throughput_std_bps", m.throughput_std(k)),
                     (p, "job", k, "first_completion_s",
                      None if fc is None else (fc - m.job_start[k]) / 1e6)]
    return rows


def run_compare(cfg, policies) -> dict:
    from .sim.metrics import run
    return {p: run(cfg.with_policy(p)) for p in policies}


def cmd_compare(args) -> int:
    policies = _policy_list(args.policies)
    _, cfg = _load(args)
    log.debug("comparing %s on %s", ",".join(policies), args.scenario)
    results = run_compare(cfg, policies)
    rows = compare_rows(results)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "compare.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(COMPARE_COLUMNS)
            for p, scope, entity, metric, value in rows:
                w.writerow((p, scope, entity, metric, _fmt(value)))
        if args.plots:
            from .report import plot_compare
            job = cfg.jobs[-1].job_id
            plot_compare(results, job, os.path.join(args.out, "compare.png"))
    out = sys.stdout
    jobs = results[policies[0]].job_ids
    out.write("policy".ljust(24) + "aggregate_GB".rjust(14)
              + "".join(f"{'std ' + k:>14}" for k in jobs) + "\n")
    for p, m in results.items():
        out.write(p.ljust(24) + f"{m.aggregate_bytes() / 1e9:14.3f}"
                  + "".join(f"{m.share_std(k):14.5f}" for k in jobs) + "\n")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairio", description="Fair-share I/O scheduling toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("policy-eval", help="print per-job token probabilities for a job table")
    pe.add_argument("policy", help='e.g. "user-then-size-fair"')
    pe.add_argument("table", help="job table file")
    pe.add_argument("--show-matrices", action="store_true", help="also print the per-level matrices")
    pe.set_defaults(func=cmd_policy_eval)

    def common(sp):
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--seed", type=int, help="override the scenario seed")
        sp.add_argument("--out", help="output directory for CSV files and figures")
        sp.add_argument("--format", choices=("csv",), default="csv")
        sp.add_argument("--lambda-ms", type=float, help="override the sync interval")
        sp.add_argument("--no-plots", dest="plots", action="store_false", help="skip PNG figures")

    sm = sub.add_parser("simulate", help="run one scenario and check its expectations")
    common(sm)
    sm.add_argument("--trace", action="store_true", help="also write the per-request dispatch trace")
    sm.set_defaults(func=cmd_simulate)

    cp = sub.add_parser("compare", help="run one scenario under several policies")
    common(cp)
    cp.add_argument("--policies", required=True, help="comma-separated, e.g. fifo,gift,tbf,themis:job-fair")
    cp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ConfigError) as exc:
        print(f"fairio: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
