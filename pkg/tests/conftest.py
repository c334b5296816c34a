import numpy as np
import pytest

from tilecluster import kernels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    with kernels.use_backend(request.param):
        yield request.param


VERDICTS = {}


@pytest.fixture
def verdict():
    """Record a criterion outcome; the lines are echoed at the end of the run."""

    def record(number, ok, detail="", clause=""):
        name = f"criterion {number}" + (f" {clause}" if clause else "")
        line = f"{name}: {'PASS' if ok else 'FAIL'}" + (f" ({detail})" if detail else "")
        VERDICTS[(number, clause)] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
