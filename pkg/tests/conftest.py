import numpy as np
import pytest

from numpmp.model import LINEAR, LOG, Stream, build_problem

ACCEPTANCE_LINES: list[str] = []


def make_problem(routes, capacities, kinds=LOG, weights=1.0):
    n = len(routes)
    kinds = [kinds] * n if isinstance(kinds, str) else list(kinds)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), (n,))
    return build_problem(
        [Stream(j, kinds[j], float(weights[j]), tuple(r)) for j, r in enumerate(routes)],
        capacities,
    )


@pytest.fixture
def net3():
    """Three links, streams on [0], [1, 2], [1]; all log, unit weights."""
    return make_problem([[0], [1, 2], [1]], [1.0, 1.0, 1.0])


@pytest.fixture
def single_log():
    return make_problem([[0]], [1.0])


@pytest.fixture
def single_linear():
    return make_problem([[0]], [5.0], kinds=LINEAR)


@pytest.fixture
def tmp_cwd(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
