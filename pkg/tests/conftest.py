import numpy as np
import pytest

from cfdiff.phantom import PhantomParams, generate
from cfdiff.rng import SeededRng
from cfdiff.schedule import build_schedule


@pytest.fixture(scope="session")
def params():
    return PhantomParams()


@pytest.fixture(scope="session")
def sched200():
    return build_schedule(200, 1e-4, 0.02)


@pytest.fixture(scope="session")
def sched_small():
    return build_schedule(20, 1e-3, 0.2)


@pytest.fixture(scope="session")
def lesioned(params):
    return generate(params, True, SeededRng(3))


@pytest.fixture(scope="session")
def healthy(params):
    return generate(params, False, SeededRng(4))


@pytest.fixture(scope="session")
def triplet(params, lesioned, healthy):
    """(x0, b, p) pairing a healthy prior with a lesion mask from another phantom."""
    b = healthy.masks.brain
    return healthy.image, b, lesioned.masks.pathology & b


def mc_band(a, b):
    """3-sigma band for the difference of two independent sample means."""
    a = np.ravel(a)
    b = np.ravel(b)
    return 3.0 * np.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)


_CRITERIA_LINES: list[str] = []


@pytest.fixture
def report(request):
    """Record one acceptance line; it is echoed live and again in the terminal summary."""
    def emit(criterion: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        _CRITERIA_LINES.append(line)
        capman = request.config.pluginmanager.getplugin("capturemanager")
        with capman.global_and_fixture_disabled():
            print("\n" + line)
        return ok
    return emit


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA_LINES:
            terminalreporter.write_line(line)
