"""Acceptance battery: one pass/fail line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s`` or via ``envavg suite``.
"""
import json

import pytest

from envavg.acceptance import CRITERIA


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    res = CRITERIA[number]()
    with capsys.disabled():
        print("\n" + res.line())
    assert res.passed, json.dumps(res.metrics, default=str, indent=1)
