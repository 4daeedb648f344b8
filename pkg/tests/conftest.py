import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)", report.nodeid)
    if not m:
        return
    key = (int(m.group(1)), m.group(2))
    detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
    if report.when == "call" or report.outcome != "passed":
        ok = report.outcome == "passed"
        prev = _CRITERIA.get(key)
        if prev is None or prev[0]:
            _CRITERIA[key] = (ok, detail or (prev[1] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), (ok, detail) in sorted(_CRITERIA.items()):
        line = f"criterion {num} {name.replace('_', ' ')}: {'PASS' if ok else 'FAIL'}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
