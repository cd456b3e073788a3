import numpy as np
import pytest

from hortrace.domains import Box, DomainSpec
from hortrace.fieldspec import complete_basis, parse_field

CONFIGS = __import__("pathlib").Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def heisenberg():
    """X1 = d1 - x2/2 d3, X2 = d2 + x1/2 d3 on R^3."""
    return [parse_field(["1", "0", "-x2/2"], name="X1"), parse_field(["0", "1", "x1/2"], name="X2")]


@pytest.fixture
def r4_slice():
    """d1 and d2 + x1 d3 on R^3."""
    return [parse_field(["1", "0", "0"], name="Y1"), parse_field(["0", "1", "x1"], name="Y2")]


@pytest.fixture
def r4_bundle():
    return [parse_field(["1", "0", "0", "0"], name="X1"), parse_field(["0", "1", "x1", "0"], name="X2"),
            parse_field(["0", "0", "0", "1"], name="T")]


@pytest.fixture
def heisenberg_basis(heisenberg):
    return complete_basis(heisenberg, np.zeros(3))


@pytest.fixture
def spec3():
    return DomainSpec.default(3)


@pytest.fixture
def cube3():
    return Box.cube(-1.0, 1.0, 3)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
