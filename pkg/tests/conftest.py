import numpy as np
import pytest
from hypothesis import settings

from projbank import _kernels

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

BACKENDS = sorted(_kernels.backends())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return _kernels.backends()[request.param]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
