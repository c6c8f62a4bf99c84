import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(num, title): acceptance criterion number and title")
    config._acceptance = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance summary for this test."""

    def put(text):
        request.config._acceptance.setdefault(request.node.nodeid, {})["detail"] = text

    return put


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    entry = item.config._acceptance.setdefault(item.nodeid, {})
    entry.update(num=mark.args[0], title=mark.args[1])
    if rep.when == "setup" and not rep.passed:
        entry["ok"] = False
    if rep.when == "call":
        entry["ok"] = rep.passed


def pytest_terminal_summary(terminalreporter, config):
    entries = [e for e in config._acceptance.values() if "num" in e and "ok" in e]
    if not entries:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for e in sorted(entries, key=lambda e: e["num"]):
        line = f"{'PASS' if e['ok'] else 'FAIL'}  criterion {e['num']:>2}: {e['title']}"
        if e.get("detail"):
            line += f"  [{e['detail']}]"
        terminalreporter.write_line(line)
