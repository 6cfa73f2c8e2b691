import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance criteria")
    config.addinivalue_line("markers", "criterion(number, name): acceptance criterion number and title")


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    number, name = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if call.excinfo is not None and not detail:
        detail = call.excinfo.exconly().splitlines()[0][:200]
    _RESULTS[number] = ("PASS" if call.excinfo is None else "FAIL", name, detail)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_RESULTS):
        status, name, detail = _RESULTS[number]
        line = f"criterion {number:2d} {status}: {name}"
        terminalreporter.write_line(f"{line} ({detail})" if detail else line)
