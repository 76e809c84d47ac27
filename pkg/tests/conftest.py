import time

import pytest

# criterion number -> {"name", "outcome", "seconds", "notes"}
_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(number, name, soft=False): acceptance criterion implemented by the test")


@pytest.fixture
def record(request):
    """Attach a note to the current criterion's summary line."""
    def add(note):
        request.node.user_properties.append(("note", note))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item.user_properties.append(("seconds", time.perf_counter() - start))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, name = marker.args[:2]
    soft = marker.kwargs.get("soft", False)
    if report.when == "setup" and report.failed:
        _RESULTS[number] = {"name": name, "outcome": "ERROR", "seconds": 0.0, "notes": [], "soft": soft}
    elif report.when == "call":
        props = item.user_properties
        _RESULTS[number] = {
            "name": name,
            "outcome": "PASS" if report.passed else "FAIL",
            "seconds": sum(v for k, v in props if k == "seconds"),
            "notes": [v for k, v in props if k == "note"],
            "soft": soft,
        }


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_RESULTS):
        r = _RESULTS[number]
        kind = " (soft)" if r["soft"] else ""
        line = f"[{r['outcome']}] {number}. {r['name']}{kind} ({r['seconds']:.1f} s)"
        if r["notes"]:
            line += ": " + "; ".join(r["notes"])
        tr.write_line(line)
