from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from evoharness.errors import FormatError
from evoharness.plan import RunPlan, StopConditions, format_plan, parse_plan


def test_defaults():
    plan = RunPlan()
    assert (plan.max_rounds, plan.session_eval_budget) == (15, 15)
    assert plan.stop == StopConditions(None, 25, 10, 100)


plans = st.builds(
    RunPlan,
    max_rounds=st.integers(1, 500),
    session_eval_budget=st.integers(1, 500),
    stop=st.builds(
        StopConditions,
        target_score=st.one_of(st.none(), st.floats(allow_nan=False, allow_infinity=False)),
        plateau_window=st.integers(1, 99),
        invalid_streak_limit=st.integers(1, 99),
        global_round_cap=st.integers(1, 999),
    ),
)


@given(plans)
def test_round_trip(plan):
    assert parse_plan(format_plan(plan)) == plan


def test_partial_document_keeps_base():
    base = RunPlan(7, 9, StopConditions(2.6359))
    plan = parse_plan("max_rounds: 3  # shorter\n\n", base)
    assert plan == RunPlan(3, 9, StopConditions(2.6359))
    assert parse_plan("target_score: none\n", base).stop.target_score is None


@pytest.mark.parametrize(
    "text",
    ["max_rounds 3", "max_rounds: x", "colour: red", "target_score: high", "max_rounds: 0", "plateau_window: -1"],
)
def test_bad_documents(text):
    with pytest.raises(FormatError):
        parse_plan(text)


def test_constructor_validation():
    with pytest.raises(ValueError):
        RunPlan(max_rounds=0)
    with pytest.raises(ValueError):
        StopConditions(global_round_cap=0)
