"""One test per acceptance criterion, run at the default budgets.

Each test prints a one-line PASS/FAIL summary; the lines are repeated in
the terminal summary. Result CSV/JSON files go to results/acceptance.
"""
from pathlib import Path

import pytest

from twosided_lerw.experiments import REGISTRY, run

OUT = Path(__file__).resolve().parent.parent / "results" / "acceptance"
BY_CRITERION = {e.criterion: e.id for e in REGISTRY.values()}


@pytest.mark.parametrize("criterion", sorted(BY_CRITERION))
def test_criterion(criterion, acceptance_log):
    name = BY_CRITERION[criterion]
    rec = run(REGISTRY[name].config(), OUT)
    line = rec.summary_line()
    print(line)
    acceptance_log.append(line)
    assert rec.passed, line
