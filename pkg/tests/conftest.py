import pytest

from ntpdetect.ingest import RawSpan, RawTrace


def make_trace(trace_id, times, names=None, label="normal"):
    """Trace from (start, end) pairs; span names default to s0, s1, ..."""
    names = names or [f"s{i}" for i in range(len(times))]
    spans = tuple(RawSpan(trace_id, f"{trace_id}-{i}", a, b, n, label=label)
                  for i, ((a, b), n) in enumerate(zip(times, names)))
    return RawTrace(trace_id, spans, label)


@pytest.fixture
def trace_factory():
    return make_trace


# -- acceptance reporting ------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (report.when != "call" and report.passed):
        return
    number, title = mark.args
    prev = _criteria.get(number, (title, True))
    _criteria[number] = (title, prev[1] and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number} {title}: {'PASS' if ok else 'FAIL'}")
