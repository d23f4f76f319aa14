import os
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gsrgnn.cli import main
from gsrgnn.report import read_report
from gsrgnn.trainer import render_table

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent
BENCH_CONFIGS = ["configs/bench_baseline_churn.cfg", "configs/bench_gsr.cfg"]
BENCH_SWEEP = [4, 8, 16, 32, 64]

# criterion lines collected by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def bench_run(tmp_path_factory):
    """One run of the benchmark sweep, shared by every test that reads it.

    Returns ``(rows by label, bench record, rendered table, wall seconds)``.
    """
    report = tmp_path_factory.mktemp("bench") / "bench.jsonl"
    args = ["bench", *(str(ROOT / c) for c in BENCH_CONFIGS),
            "--sweep-k", ",".join(map(str, BENCH_SWEEP)), "--report", str(report)]
    t0 = time.perf_counter()
    code = main(args)
    wall = time.perf_counter() - t0
    assert code == 0
    record = next(r for r in read_report(report) if r["type"] == "bench")
    return {r["label"]: r for r in record["rows"]}, record, render_table(record["rows"]), wall
