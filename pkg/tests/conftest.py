"""Shared fixtures and the acceptance-criteria terminal summary."""

import pytest

ACCEPTANCE_RESULTS = []


def record_criterion(number, name, passed, detail):
    ACCEPTANCE_RESULTS.append((number, name, bool(passed), detail))
    print(f"ACCEPTANCE {number:>2} {name}: {'PASS' if passed else 'FAIL'} ({detail})")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"  {number:>2}. {name}: {status}  ({detail})")
    n_pass = sum(1 for r in ACCEPTANCE_RESULTS if r[2])
    terminalreporter.write_line(
        f"  -> {n_pass}/{len(ACCEPTANCE_RESULTS)} acceptance criteria pass")
