"""Shared pytest hooks.

The acceptance tests print one ``[criterion NN] PASS — …`` line each with the
measured values.  Under default output capture those lines are swallowed for
passing tests, so this hook collects them from the captured stdout and repeats
them in a terminal summary section — the acceptance record stays visible in a
plain ``pytest -v`` run.
"""

_criterion_lines: list[str] = []


def pytest_runtest_logreport(report):
    if report.when != "call" or not report.passed:
        return
    for line in report.capstdout.splitlines():
        if line.startswith("[criterion"):
            _criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(set(_criterion_lines)):
            terminalreporter.write_line(line)
