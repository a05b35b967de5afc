import numpy as np
import pytest

from rtann import build_index, gen_synthetic, gen_synthetic_queries


@pytest.fixture(scope="session")
def small_base():
    return gen_synthetic(2000, 8, 8, 0.05, 3)


@pytest.fixture(scope="session")
def small_queries():
    return gen_synthetic_queries(40, 8, 8, 0.05, 3, 11)


@pytest.fixture(scope="session")
def small_index(small_base):
    return build_index(small_base, 8, 16, seed=3, sample_n=200)


@pytest.fixture(scope="session")
def bench_base():
    """The seeded benchmark used by the acceptance criteria."""
    return gen_synthetic(20_000, 32, 64, 0.05, 1)


@pytest.fixture(scope="session")
def bench_queries():
    return gen_synthetic_queries(200, 32, 64, 0.05, 1, 2)


@pytest.fixture(scope="session")
def bench_index(bench_base):
    return build_index(bench_base, 64, 64, seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
