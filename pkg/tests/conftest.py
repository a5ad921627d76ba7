import numpy as np
import pytest
from hypothesis import settings

from dslab.family import Grid1D, build_family

settings.register_profile("lab", max_examples=40, deadline=None)
settings.load_profile("lab")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tanh8():
    return build_family({"name": "scalar-profile", "compact": [-2, 2]}, Grid1D.line(-8, 8, 0.1))


@pytest.fixture(scope="session")
def tanh20():
    return build_family({"name": "scalar-profile"}, Grid1D.line(-20, 20, 0.05))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        ok, detail = RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
