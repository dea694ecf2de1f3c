import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# criterion number -> summary line, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def _line(number, title, ok, detail):
    return f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")


@pytest.fixture
def criterion(request):
    """Record and print the verdict of one acceptance criterion, then assert it."""
    def record(ok, detail=""):
        number, title = request.node.get_closest_marker("criterion").args
        line = _line(number, title, bool(ok), detail)
        ACCEPTANCE[number] = line
        print(line)
        assert ok, line
    return record


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and rep.when == "call" and rep.failed and mark.args[0] not in ACCEPTANCE:
        ACCEPTANCE[mark.args[0]] = _line(*mark.args, False, f"error: {call.excinfo.typename}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
