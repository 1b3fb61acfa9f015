import numpy as np
import pytest

from c2stadium import largesep as ls
from c2stadium.geometry import build_boundary, build_table, make_shape


@pytest.fixture(scope="session")
def quad_shape():
    return make_shape([1.0, 0.0, -1.0])


@pytest.fixture(scope="session")
def gamma(quad_shape):
    return build_boundary(quad_shape, 0.1, 1.0)


@pytest.fixture(scope="session")
def table0(gamma):
    return build_table(gamma, 0.0)


@pytest.fixture(scope="session")
def geom(gamma):
    return ls.find_three_pass(gamma)


@pytest.fixture(scope="session")
def P(gamma, geom):
    return ls.build_pass(build_table(gamma, 0.0), geom)


@pytest.fixture
def rng():
    return np.random.default_rng(20261016)


_ACCEPTANCE = []


@pytest.fixture
def verdict(capsys):
    """Print and record one PASS/FAIL line for an acceptance criterion."""

    def report(k, ok, detail):
        line = f"criterion {k:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
