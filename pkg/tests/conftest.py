from __future__ import annotations

import pytest

from chemagents.demo import scenario_dir
from chemagents.graph import AbstractGraph, load_graph


@pytest.fixture
def ethynylation() -> AbstractGraph:
    return load_graph(scenario_dir("complete") / "graph.json")


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
