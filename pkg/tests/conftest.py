import numpy as np
import pytest

from dglti.mesh import FineRule, build_interval_mesh, build_tensor_mesh, classify, graded_axis
from dglti.problems import te_cavity, wave1d_standing


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def graded_te_mesh(n=8, levels=1, eps=1.0, mu=1.0):
    box = (0.375, 0.625)
    ax = graded_axis(0.0, 1.0, n, box, levels)
    return build_tensor_mesh(((0, 1), (0, 1)), ax, ax, eps, mu)


def uniform_te_mesh(n, eps=1.0, mu=1.0):
    ax = np.linspace(0.0, 1.0, n + 1)
    return build_tensor_mesh(((0, 1), (0, 1)), ax, ax, eps, mu)


def uniform_interval(n, eps=1.0, mu=1.0):
    return build_interval_mesh((0.0, 1.0), [1.0 / n] * n, eps, mu)


@pytest.fixture
def wave():
    return wave1d_standing()


@pytest.fixture
def te():
    return te_cavity()


# --- acceptance reporting ------------------------------------------------------

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one pass/fail line per acceptance criterion for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
