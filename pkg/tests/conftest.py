"""Shared test configuration.

Collects the outcome of each numbered end-to-end check in
test_acceptance.py and prints a one-line verdict per check at the end of
the run, so a failure in the detailed suite does not bury the headline
results.
"""
from __future__ import annotations

import re

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    print_blob=True,
)
settings.load_profile("ci")

_CRITERION = re.compile(r"test_criterion_(\d+)")
_RESULTS: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call" or "test_acceptance" not in item.nodeid:
        return
    m = _CRITERION.match(item.name)
    if not m:
        return
    doc = (item.function.__doc__ or "").strip().splitlines()
    label = doc[0] if doc else item.name
    _RESULTS[int(m.group(1))] = (rep.outcome.upper(), label)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance summary")
    for num in sorted(_RESULTS):
        outcome, label = _RESULTS[num]
        verdict = "PASS" if outcome == "PASSED" else "FAIL"
        terminalreporter.write_line(f"criterion {num}: {verdict}  {label}")
