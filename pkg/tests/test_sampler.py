import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from scoreuq.errors import ConfigError, HookError, NumericError
from scoreuq.pool import sample_pool
from scoreuq.rng import Streams
from scoreuq.sampler import (CountingPredictor, SamplerConfig, ddim_step, ddpm_step, predict_x0, renoise,
                             run_sampler)
from scoreuq.schedule import from_betas, plan_timesteps
from scoreuq.score import DatasetPredictorModel, GmmDistribution, GmmPredictor

finite = st.floats(-100, 100, allow_subnormal=False)


def test_predict_x0():
    assert predict_x0(1.0, 0.0, 0.25) == 2.0
    ab = 0.3
    x = np.array([0.7, -1.1])
    assert np.allclose(predict_x0(x, x / math.sqrt(1 - ab), ab), 0.0, atol=1e-15)
    assert np.array_equal(predict_x0(x, np.ones(2), 1.0), x)


def test_ddim_step():
    x = np.array([0.4, -2.0])
    eps = np.array([0.1, 0.3])
    assert np.allclose(ddim_step(x, eps, 0.5, 1.0), predict_x0(x, eps, 0.5))
    assert np.array_equal(ddim_step(x, eps, 0.5, 0.5), x)
    assert math.isclose(float(ddim_step(1.0, 0.0, 0.25, 0.5)), math.sqrt(0.5) * 2.0)
    with pytest.raises(ConfigError):
        ddim_step(x, eps, 0.6, 0.5)


def test_ddpm_mean_and_boundary():
    s = from_betas([0.1, 0.2])
    x = np.array([1.0, -3.0])
    assert np.allclose(ddpm_step(x, np.zeros(2), s, 2, np.zeros(2)), x / math.sqrt(0.8))
    big = np.full(2, 1e6)
    assert np.array_equal(ddpm_step(x, np.zeros(2), s, 1, big), ddpm_step(x, np.zeros(2), s, 1, np.zeros(2)))


@pytest.mark.parametrize("variance", ["beta", "beta_tilde"])
def test_ddpm_noise_variance(variance):
    s = from_betas([0.1, 0.2, 0.3])
    z = Streams(3, [0]).normal((200000,))[0]
    out = ddpm_step(np.zeros_like(z), np.zeros_like(z), s, 3, z, variance=variance)
    want = 0.3 if variance == "beta" else (1 - s.alpha_bar(2)) / (1 - s.alpha_bar(3)) * 0.3
    assert abs(out.var() / want - 1) < 0.02


def test_ddpm_skip_uses_effective_alpha():
    s = from_betas([0.1, 0.2, 0.3])
    x = np.array([0.5])
    got = ddpm_step(x, np.zeros(1), s, 3, np.zeros(1), t_prev=1)
    assert np.allclose(got, x / math.sqrt(s.alpha_bar(3) / s.alpha_bar(1)))


@given(arrays(np.float64, 3, elements=finite), arrays(np.float64, 3, elements=finite), st.integers(1, 1000))
def test_renoise_roundtrip(x0, eps, t):
    from scoreuq.schedule import build_linear_schedule

    s = build_linear_schedule()
    back = predict_x0(renoise(x0, s, t, eps), eps, s.alpha_bar(t))
    assert np.allclose(back, x0, rtol=1e-9, atol=1e-9 * (1 + np.abs(eps).max() / math.sqrt(s.alpha_bar(t))))


def test_renoise_closed_forms(schedule):
    e = np.array([0.3, -0.2])
    assert np.allclose(renoise(np.zeros(2), schedule, 10, e), schedule.sigma(10) * e)
    assert np.allclose(renoise(e, schedule, 10, np.zeros(2)), math.sqrt(schedule.alpha_bar(10)) * e)


def test_ddim_contracts_to_point_mass(schedule):
    c = np.array([1.5, -0.5])
    pred = CountingPredictor(DatasetPredictorModel([c], schedule))
    xT = Streams(0, range(8)).normal((2,))
    tr = run_sampler(pred, schedule, SamplerConfig(plan_timesteps(1000, 50)), xT)
    assert np.abs(tr.x0 - c).max() < 1e-8
    assert np.array_equal(tr.nfe, np.full(8, 50)) and pred.calls == 50


@pytest.mark.parametrize("kind", ["ddim", "ddpm"])
def test_run_is_deterministic(schedule, kind):
    pred = GmmPredictor(GmmDistribution([0.5, 0.5], [[-2.0], [2.0]], [[0.25], [0.25]]), schedule)
    cfg = SamplerConfig(plan_timesteps(1000, 20), kind=kind, seed=9)
    xT = Streams(1, range(5)).normal((1,))
    a, b = run_sampler(pred, schedule, cfg, xT), run_sampler(pred, schedule, cfg, xT)
    assert np.array_equal(a.x0, b.x0) and all(np.array_equal(p, q) for p, q in zip(a.states, b.states))


def test_hook_errors_carry_step(schedule):
    def bad(ctx):
        if ctx.index == 3:
            raise RuntimeError("boom")

    pred = GmmPredictor(GmmDistribution([1.0], [[0.0]], [[1.0]]), schedule)
    with pytest.raises(HookError) as info:
        run_sampler(pred, schedule, SamplerConfig(plan_timesteps(1000, 10), hooks=(bad,)), np.zeros((2, 1)))
    assert info.value.step == 3 and info.value.timestep == 700


def test_non_finite_state_raises(schedule):
    class Nan:
        def predict(self, x, t):
            return np.full_like(x, np.nan)

    with pytest.raises(NumericError):
        run_sampler(Nan(), schedule, SamplerConfig(plan_timesteps(1000, 10)), np.zeros((2, 1)))


@pytest.mark.parametrize("kind", ["ddim", "ddpm"])
def test_pool_independent_of_threads_and_chunks(schedule, kind):
    pred = GmmPredictor(GmmDistribution([0.5, 0.5], [[-2.0, 1.0], [2.0, 0.0]], [[0.25, 1.0], [0.5, 0.5]]), schedule)
    plan = plan_timesteps(1000, 25)
    runs = [sample_pool(pred, schedule, plan, 50, 2, 4, kind=kind, threads=th, chunk_size=cs)
            for th, cs in [(1, 256), (4, 7), (2, 16)]]
    for r in runs[1:]:
        assert r.x0.tobytes() == runs[0].x0.tobytes()
