import logging

import pytest

from vdkflow.grid import load_case


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run 500-bus reproductions")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def case14():
    return load_case("case14")


@pytest.fixture(scope="session")
def case118():
    return load_case("case118")


@pytest.fixture(scope="session")
def case500():
    grid_log = logging.getLogger("vdkflow.grid")
    level = grid_log.level
    grid_log.setLevel(logging.ERROR)
    try:
        return load_case("case_ACTIVSg500")
    finally:
        grid_log.setLevel(level)


# -- acceptance reporting -----------------------------------------------------

_CRITERIA = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records one acceptance line."""

    def record(n, ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n in _CRITERIA:
            ok, detail = _CRITERIA[n]
            terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:>2}: NOT RUN")
