import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _acceptance_results[name] = report.outcome.upper()


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in sorted(_acceptance_results.items()):
        terminalreporter.write_line(f"{name}: {outcome.replace('PASSED', 'PASS').replace('FAILED', 'FAIL')}")
