"""Acceptance-criteria terminal summary shared by every test tree.

Tests marked ``@pytest.mark.acceptance("<label>")`` get one [PASS]/[FAIL]
line each in the terminal summary so the criteria can be eyeballed at a
glance after a run, no matter which suite they live in.
"""
import pytest


def pytest_configure(config):
    config._acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    label = marker.args[0] if marker.args else item.name
    results = item.config._acceptance_results
    if report.when == "call":
        results.append((label, report.passed))
    elif report.when == "setup" and report.outcome != "passed":
        results.append((label, False))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed in results:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {label}")
