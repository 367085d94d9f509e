import math

import numpy as np
import pytest

from scoreuq.errors import ConfigError
from scoreuq.schedule import build_linear_schedule, from_betas, plan_timesteps


def test_two_step_tables():
    s = build_linear_schedule(2, 0.1, 0.2)
    assert np.allclose(s.betas, [0.1, 0.2])
    assert np.allclose(s.alpha_bars, [0.9, 0.72])
    assert math.isclose(s.sigma(2), math.sqrt(0.28))


def test_single_step():
    s = build_linear_schedule(1, 0.5, 0.5)
    assert np.allclose(s.alpha_bars, [0.5])
    assert math.isclose(s.sigma(1), math.sqrt(0.5))


def test_zero_beta_rejected():
    with pytest.raises(ConfigError):
        build_linear_schedule(3, 0.0, 0.1)


def test_from_betas():
    a, b = from_betas([0.1, 0.2]), build_linear_schedule(2, 0.1, 0.2)
    assert np.array_equal(a.alpha_bars, b.alpha_bars)
    with pytest.raises(ConfigError):
        from_betas([])
    s = from_betas([0.99])
    assert np.allclose(s.alpha_bars, [0.01]) and math.isclose(s.sigma(1), math.sqrt(0.99))


def test_boundary_accessors(schedule):
    assert schedule.alpha_bar(0) == 1.0 and schedule.sigma(0) == 0.0
    assert math.isclose(schedule.beta(1), 1e-4) and math.isclose(schedule.beta(1000), 0.02)


def test_tables_read_only(schedule):
    with pytest.raises(ValueError):
        schedule.betas[0] = 1.0


def test_alpha_bar_decreasing(schedule):
    assert np.all(np.diff(schedule.alpha_bars) < 0)


def test_plans():
    assert list(plan_timesteps(10, 5).steps) == [10, 8, 6, 4, 2]
    assert list(plan_timesteps(5, 5).steps) == [5, 4, 3, 2, 1]
    with pytest.raises(ConfigError):
        plan_timesteps(4, 5)


def test_plan_prev_and_restrict():
    p = plan_timesteps(1000, 50)
    assert p.steps[0] == 1000 and p.steps[-1] == 20
    assert p.prev(0) == 980 and p.prev(49) == 0
    r = p.restricted(500)
    assert r.steps[0] == 500 and len(r) == 25
