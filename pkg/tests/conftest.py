import pytest

# criterion number -> (title, outcome, detail)
_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")


@pytest.fixture
def record(request):
    """Attach a one-line measured summary to the current acceptance criterion."""
    m = request.node.get_closest_marker("criterion")

    def _record(text: str) -> None:
        if m is not None:
            _CRITERIA.setdefault(m.args[0], [m.args[1], None, ""])[2] = text
    return _record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    entry = _CRITERIA.setdefault(m.args[0], [m.args[1], None, ""])
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        entry[1] = "PASS" if rep.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        line = f"criterion {n}: {status or 'NOT RUN'}  {title}"
        if detail:
            line += f"  [{detail}]"
        terminalreporter.write_line(line)
