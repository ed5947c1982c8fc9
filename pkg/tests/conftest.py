import os
from pathlib import Path

import pytest

from cbdemand.config import RunConfig
from cbdemand.m5 import make_synthetic_m5

SMALL = dict(start_date="2015-01-01", end_date="2016-03-31", split_date="2016-01-01")


@pytest.fixture(scope="session")
def small_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("small_m5")
    make_synthetic_m5(root, n_items=4, n_stores=2, start=SMALL["start_date"], end=SMALL["end_date"], seed=3)
    return root


@pytest.fixture
def small_cfg(small_data, tmp_path):
    return RunConfig(data_dir=str(small_data), item_pattern=None, out=str(tmp_path / "out"), pit_bins=10, **SMALL)


def m5_dir():
    d = os.environ.get("M5_DATA_DIR")
    if d and (Path(d) / "calendar.csv").exists():
        return Path(d)
    return None


@pytest.fixture(scope="session")
def m5_runs(tmp_path_factory):
    """Mode a and mode c experiments on the public files, run once per session."""
    from cbdemand.experiment import run_experiment

    root = m5_dir()
    if root is None:
        pytest.skip("M5 data not available (set M5_DATA_DIR)")
    out = tmp_path_factory.mktemp("m5_runs")
    runs = {}
    for mode in ("a", "c"):
        cfg = RunConfig(data_dir=str(root), mode=mode, out=str(out / mode))
        runs[mode] = (run_experiment(cfg), out / mode)
    return runs


# acceptance summary: one line per criterion at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
