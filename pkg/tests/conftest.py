import pytest

from walklab.groups import FreeAbelian, FreeGroup, FreeProduct, Heisenberg
from walklab.walks import simple_random_walk


@pytest.fixture(scope="session")
def F2():
    return FreeGroup(2)


@pytest.fixture(scope="session")
def Z2():
    return FreeAbelian(2)


@pytest.fixture(scope="session")
def H3():
    return Heisenberg()


@pytest.fixture(scope="session")
def Z2Z():
    return FreeProduct([FreeAbelian(2), FreeAbelian(1, names=["t"])])


@pytest.fixture(scope="session")
def green_f2(F2):
    from walklab.green import GreenMetric
    return GreenMetric(simple_random_walk(F2))


@pytest.fixture(scope="session")
def green_z2z(Z2Z):
    from walklab.green import GreenMetric
    return GreenMetric(simple_random_walk(Z2Z))


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
