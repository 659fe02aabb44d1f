"""Acceptance criteria: one test per criterion, one PASS/FAIL line each.

The lines are printed as each criterion finishes and repeated in the terminal
summary. Failures are reported as test failures, not skipped or expected.
"""

import pytest

from hpafem.acceptance import SUITES, _SEEDED

SEED = 0
LINES: list[str] = []


@pytest.mark.slow
@pytest.mark.parametrize("check", SUITES["all"], ids=lambda c: c.__name__)
def test_criterion(check, capsys):
    res = check(SEED) if check in _SEEDED else check()
    line = res.line()
    LINES.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert res.passed, line
