import pytest

from regime_harvest.model_core import DetectionConfig, MarketParams, ResourceParams


@pytest.fixture
def surface_market():
    return MarketParams(a=5.0, b=0.75, c=1.25, F=0.5, rho=0.02)


@pytest.fixture
def surface_resource():
    return ResourceParams(mu=6.0, sigma=3.25, x0=10.0)


@pytest.fixture
def episode_market():
    return MarketParams(a=3.0, b=0.1, c=0.5, F=0.25, rho=0.02)


@pytest.fixture
def episode_resource():
    return ResourceParams(mu=5.0, sigma=3.0, x0=10.0)


@pytest.fixture
def detection50():
    return DetectionConfig(tolerance_T=50.0)


_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion covered by a test")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, text = marker.args
    entry = _CRITERIA.setdefault(n, {"text": text, "ok": True, "ran": False})
    if call.when == "call" or call.excinfo is not None:
        entry["ran"] = entry["ran"] or call.when == "call"
        if call.excinfo is not None:
            entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        entry = _CRITERIA[n]
        status = "PASS" if entry["ok"] and entry["ran"] else "FAIL"
        terminalreporter.write_line(f"{status} criterion {n}: {entry['text']}")
