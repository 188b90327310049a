"""Acceptance criteria 1-11, one test each, sharing the expensive runs.

Run directly (python tests/test_acceptance.py) or under pytest; either way one
PASS/FAIL line per criterion is printed.
"""
import pytest

from blowuplab import acceptance

LINES = []


@pytest.fixture(scope="module")
def ctx():
    return acceptance.Context(3)


@pytest.mark.parametrize("cid", sorted(acceptance.CRITERIA))
def test_criterion(ctx, cid):
    r = acceptance.CRITERIA[cid](ctx)
    LINES.append(r.line())
    print(r.line())
    assert r.passed, r.line()


if __name__ == "__main__":
    import sys
    res = acceptance.run_suite("all")
    sys.exit(0 if all(r.passed for r in res) else 1)
