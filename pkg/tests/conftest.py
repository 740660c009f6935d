import pytest

# criterion number -> (description, outcome, details)
_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def report(request):
    """Collects free-form details printed next to the criterion's verdict."""
    details = []
    request.node._criterion_details = details
    return details


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    number, title = marker.args
    details = getattr(item, "_criterion_details", [])
    _CRITERIA[number] = (title, "PASS" if rep.passed else "FAIL", "; ".join(details))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, verdict, details = _CRITERIA[number]
        line = f"{verdict} criterion {number}: {title}"
        if details:
            line += f" ({details})"
        terminalreporter.write_line(line)
