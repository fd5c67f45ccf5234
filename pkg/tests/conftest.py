import numpy as np
import pytest

from alh_compactify.metric_zoo import ModelSpec, make_hyperbolic, make_model, make_warped_order
from alh_compactify.tensor_core import HalfSpaceGrid


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def hyp_grid():
    return HalfSpaceGrid(1, 0.0, 10.0, 201, 1.0, 33)


@pytest.fixture(scope="session")
def hyp_metric(hyp_grid):
    return make_hyperbolic(hyp_grid)


@pytest.fixture(scope="session")
def pert_grid():
    return HalfSpaceGrid(1, 0.0, 20.0, 401, 1.0, 33)


@pytest.fixture(scope="session")
def order05(pert_grid):
    return make_model(pert_grid, ModelSpec(a=0.5))


@pytest.fixture(scope="session")
def order15(pert_grid):
    return make_model(pert_grid, ModelSpec(a=1.5))


@pytest.fixture(scope="session")
def warped05():
    return make_warped_order(HalfSpaceGrid(1, 0.0, 12.0, 241, 1.0, 17), 0.5)


# --------------------------------------------------------------------------
# one summary line per acceptance criterion

CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


def pytest_runtest_logreport(report):
    marks = getattr(report, "criterion", None)
    if marks is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        n, title = marks
        prev = CRITERIA.get(n, (title, True))
        CRITERIA[n] = (title, prev[1] and report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result().criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, ok = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {title}")
