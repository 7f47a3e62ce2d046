import numpy as np
import pytest

from lakeprompt import kernels


@pytest.fixture(params=sorted(kernels.IMPLS))
def backend(request, monkeypatch):
    """Run the test once per kernel implementation."""
    impl = kernels.IMPLS[request.param]
    monkeypatch.setattr(kernels, "dilate_once", impl["dilate"])
    monkeypatch.setattr(kernels, "erode_once", impl["erode"])
    monkeypatch.setattr(kernels, "dbscan_grid", impl["dbscan"])
    monkeypatch.setattr(kernels, "border_reach", impl["border_reach"])
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acceptance_log.LINES):
            terminalreporter.write_line(acceptance_log.LINES[n])
