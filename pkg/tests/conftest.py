import functools

import pytest

from mimofair.fairness import FairnessOptions, UtilitySpec, solve_cluster
from mimofair.scenario import build_cluster_problems, hex7_scenario, two_cell_scenario


@functools.lru_cache(maxsize=None)
def solved(layout, cooperation, kind):
    """Reports for every cluster of a built-in scenario, cached for the session."""
    sc = two_cell_scenario(cooperation) if layout == "2cell" else hex7_scenario(cooperation)
    clusters = build_cluster_problems(sc)
    reports = [solve_cluster(c, UtilitySpec(kind), FairnessOptions()) for c in clusters]
    return sc, clusters, reports


@pytest.fixture(scope="session")
def solve_builtin():
    return solved


ACCEPTANCE = {}


def record(criterion, ok, detail):
    """Store one acceptance verdict; printed in the terminal summary."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    assert ok, f"criterion {criterion}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c}: {'PASS' if ok else 'FAIL'}  {detail}")
