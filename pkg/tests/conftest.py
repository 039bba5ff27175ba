import numpy as np
import pytest

from dpps.harness.config import ExperimentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config(tmp_path):
    """A fast synthetic config: few rounds, small data."""
    return ExperimentConfig(output_dir=str(tmp_path / "run")).with_updates(
        optimizer={"rounds": 30, "metrics_interval": 10, "eval_batch_size": 100},
        task={"n_examples": 1000, "n_test": 200},
    )


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        if report.outcome == "skipped":
            status = "SKIP"
            if isinstance(report.longrepr, tuple):
                detail = report.longrepr[2]
        else:
            status = "PASS" if report.outcome == "passed" else "FAIL"
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{status} {name}: {detail}")
