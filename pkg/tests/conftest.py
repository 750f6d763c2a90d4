import os
import pathlib

import pytest

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"
TABLES = SCENARIOS / "tables"
GOLDEN = pathlib.Path(__file__).resolve().parent / "golden"

# name -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}

# scenarios that are driven through `compare` rather than `simulate`
COMPARE_RUNS = {
    "fig11_compare": "themis:job-fair,gift,tbf,fifo",
    "starvation": "fifo,themis:job-fair",
}


def scenario_names():
    return sorted(p.stem for p in SCENARIOS.glob("*.json"))


def run_cli(name, out_dir):
    """Run one scenario through the CLI the way a user would; returns the exit code."""
    from fairio.cli import main

    path = str(SCENARIOS / f"{name}.json")
    if name in COMPARE_RUNS:
        return main(["compare", path, "--policies", COMPARE_RUNS[name], "--out", str(out_dir), "--no-plots"])
    return main(["simulate", path, "--out", str(out_dir), "--no-plots"])


@pytest.fixture(scope="session")
def cli_runs(tmp_path_factory):
    """Lazily run each scenario once per session and cache (exit code, output dir)."""
    cache = {}

    def get(name):
        if name not in cache:
            out = tmp_path_factory.mktemp(f"run-{name}")
            cache[name] = (run_cli(name, out), out)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def scenario():
    from fairio.sim import load_scenario

    def load(name):
        return load_scenario(SCENARIOS / f"{name}.json")

    return load


@pytest.fixture(scope="session")
def metrics_cache():
    """Shared Metrics per (scenario, policy override, lambda override)."""
    from dataclasses import replace

    from fairio.sim import load_scenario, run

    cache = {}

    def get(name, policy=None, lambda_ms=None):
        key = (name, policy, lambda_ms)
        if key not in cache:
            cfg = load_scenario(SCENARIOS / f"{name}.json").config
            if policy is not None:
                cfg = cfg.with_policy(policy)
            if lambda_ms is not None:
                cfg = replace(cfg, lambda_ms=lambda_ms)
            cache[key] = (cfg, run(cfg))
        return cache[key]

    return get


def regen_golden() -> bool:
    return os.environ.get("FAIRIO_REGEN_GOLDEN") == "1"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda n: int(n.split(".")[0])):
        passed, detail = ACCEPTANCE[name]
        tr.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    n_pass = sum(p for p, _ in ACCEPTANCE.values())
    tr.write_line(f"{n_pass}/{len(ACCEPTANCE)} criteria passed")
