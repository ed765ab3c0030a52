import sys
from pathlib import Path

import pytest

HERE = Path(__file__).parent
sys.path.insert(0, str(HERE))

FIXTURE = HERE / "data" / "fixture"
GOLDEN = HERE / "data" / "golden"


@pytest.fixture
def fixture_paths():
    return (FIXTURE / "items.ndjson", FIXTURE / "annotations.ndjson", FIXTURE / "validations.ndjson")


@pytest.fixture
def dataset(fixture_paths):
    from labelmeasure.pipeline import parse_inputs
    return parse_inputs(*fixture_paths)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
