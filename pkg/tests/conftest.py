import os
import sys

from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "repo", max_examples=40, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


# one PASS/FAIL line per acceptance criterion
_CRITERIA = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rpartition("::")[2]
    if not name.startswith("test_criterion_"):
        return
    n = int(name.split("_")[2])
    failed = report.failed or (report.when == "call" and report.skipped)
    _CRITERIA[n] = _CRITERIA.get(n, True) and not failed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _CRITERIA[n] else 'FAIL'}")
