import math

import pytest

from src.custom_exception import ConfigError
from src.sanitization_plan import SanitizationPlan, allocation_schedule


@pytest.mark.parametrize("kind, L, p, expected", [
    ("equal", 2, 15, (1 / 3, 1 / 3, 1 / 3)),
    ("equal", 3, 3, (1 / 3, 1 / 3, 1 / 3)),
    ("half-split", 2, 15, (0.25, 0.25, 0.5)),
    ("half-split", 3, 15, (1 / 6, 1 / 6, 1 / 6, 0.5)),
    ("0.2,0.3,0.5", 2, 15, (0.2, 0.3, 0.5)),
])
def test_schedules(kind, L, p, expected):
    assert allocation_schedule(kind, L, p) == pytest.approx(expected, abs=1e-15)


def test_half_split_falls_back_to_equal_without_leftover_layer():
    assert allocation_schedule("half-split", 2, 2) == (0.5, 0.5)


@pytest.mark.parametrize("L, p", [(0, 3), (4, 3)])
def test_height_out_of_range(L, p):
    with pytest.raises(ConfigError):
        allocation_schedule("equal", L, p)


@pytest.mark.parametrize("allocation", [(0.5, 0.4), (0.5, 0.5, 0.1), (1.0, 0.0)])
def test_invalid_allocations(allocation):
    with pytest.raises(ConfigError):
        SanitizationPlan(1, allocation, 1, 1.0)


def test_unknown_schedule():
    with pytest.raises(ConfigError):
        allocation_schedule("fibonacci", 2, 5)


def test_layer_budget():
    plan = SanitizationPlan.build(2, "half-split", 5, math.e, p=15, seed=3)
    assert plan.layer_budget(1).epsilon == pytest.approx(0.25 * math.e / 5)
    assert plan.layer_budget(3).epsilon == pytest.approx(0.5 * math.e / 5)
    assert plan.replicate_budget.epsilon == pytest.approx(math.e / 5)


def test_more_replicates_means_smaller_layer_budgets():
    one = SanitizationPlan.build(2, "equal", 1, 1.0, p=4)
    five = SanitizationPlan.build(2, "equal", 5, 1.0, p=4)
    assert one.layer_budget(1).epsilon == pytest.approx(5 * five.layer_budget(1).epsilon)


def test_height_checked_against_schema():
    plan = SanitizationPlan.build(2, "equal", 1, 1.0, p=4)
    with pytest.raises(ConfigError):
        plan.check_schema(1)


def test_plan_echo():
    plan = SanitizationPlan.build(1, "equal", 2, math.inf, p=1)
    assert plan.to_dict() == {"L": 1, "allocation": [1.0], "m": 2, "epsilon": "inf", "seed": 0}
