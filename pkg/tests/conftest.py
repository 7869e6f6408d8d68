import numpy as np
import pytest

from ctxview.density import fit_relational_model
from ctxview.localclf import fit_score_model
from ctxview.relations import RelationFormat
from ctxview.synth import PlantedRule, generate_scenes

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[marker] = "PASS" if report.outcome == "passed" else "FAIL"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is not None:
        rep.criterion = (m.args[0], m.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}")


@pytest.fixture(scope="session")
def lane_data():
    """Small noisy lane dataset with K=4."""
    rule = PlantedRule(rho=0.3, fp_rate=1.0)
    return rule, generate_scenes(rule, (60, 30, 30), seed=11)


@pytest.fixture(scope="session")
def lane_models(lane_data):
    rule, (train, _, _) = lane_data
    return (fit_relational_model(train, RelationFormat.RF1, rule.K),
            fit_score_model(train))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
