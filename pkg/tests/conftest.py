import functools
import time
from pathlib import Path

import pytest

from laplace_sindy.cli import load_config, run_experiment

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def run_config(tmp_path_factory):
    """Run a checked-in config once per session; returns ``(report, seconds)``."""
    root = tmp_path_factory.mktemp("runs")

    @functools.lru_cache(maxsize=None)
    def run(name: str):
        config = load_config(CONFIGS / f"{name}.ini", {"experiment.output_dir": str(root / name)})
        start = time.perf_counter()
        report = run_experiment(config)
        return report, time.perf_counter() - start

    return run


_ACCEPTANCE: list[str] = []
_SESSION_START = time.perf_counter()


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for the acceptance summary and echo it."""

    def record(label: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE:
        terminalreporter.write_line(line)
    elapsed = time.perf_counter() - _SESSION_START
    terminalreporter.write_line(f"{'PASS' if elapsed < 300 else 'FAIL'}  full suite wall time: {elapsed:.1f} s (limit 300 s)")
