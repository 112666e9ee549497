import numpy as np
import pytest

from mononext import _kernels


@pytest.fixture(params=["python", "numba"])
def kernels(request, monkeypatch):
    """Run a test once per kernel path by swapping the active implementation."""
    impl = _kernels.python_kernels if request.param == "python" else _kernels.numba_kernels
    monkeypatch.setattr(_kernels, "active", impl)
    return impl


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def _record(number, title, ok, detail=""):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[number])
