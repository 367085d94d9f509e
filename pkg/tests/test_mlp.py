import numpy as np
import pytest

from scoreuq.errors import ConfigError
from scoreuq.experiments import benchmark, training_data
from scoreuq.mlp import (MlpConfig, MlpParams, MlpPredictor, init_params, loss_and_grads, mc_dropout_uncertainty,
                         mlp_forward, train_dsm)
from scoreuq.rng import Streams


def _flat(params):
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def _unflat(params, v):
    out, k = params.copy(), 0
    for a in out.weights + out.biases:
        a[...] = v[k:k + a.size].reshape(a.shape)
        k += a.size
    return out


@pytest.mark.parametrize("dropout", [0.0, 0.3])
def test_backprop_matches_fd(rng, dropout):
    cfg = MlpConfig(input_dim=2, hidden=(6, 5), time_features=2, dropout_rate=dropout)
    params = init_params(cfg)
    params = _unflat(params, _flat(params) + 0.3 * rng.normal(size=_flat(params).size))
    x, t, y = rng.normal(size=(7, 2)), rng.integers(1, 1000, size=7), rng.normal(size=(7, 2))

    def loss(p):
        draw = Streams(5, range(7)) if dropout else None
        return loss_and_grads(p, cfg, x, t, y, draw)

    _, grads = loss(params)
    g = _flat(grads)
    v = _flat(params)
    h = 1e-6
    fd = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        fd[i] = (loss(_unflat(params, v + e))[0] - loss(_unflat(params, v - e))[0]) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-5


def test_zero_params_give_zero_output(rng):
    cfg = MlpConfig(input_dim=3, hidden=(4,))
    p = init_params(cfg)
    zero = MlpParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    assert np.array_equal(mlp_forward(zero, cfg, rng.normal(size=(5, 3)), 10), np.zeros((5, 3)))


def test_dropout_off_is_deterministic(rng):
    cfg = MlpConfig(input_dim=2, dropout_rate=0.5)
    p = init_params(cfg)
    x = rng.normal(size=(4, 2))
    assert np.array_equal(mlp_forward(p, cfg, x, 7), mlp_forward(p, cfg, x, 7))


def test_zero_epochs_keep_init(schedule):
    cfg = MlpConfig(input_dim=1, epochs=0)
    params, losses = train_dsm(np.zeros((10, 1)), schedule, cfg)
    assert len(losses) == 0
    for a, b in zip(params.weights, init_params(cfg).weights):
        assert np.array_equal(a, b)


def test_training_reduces_loss_ten_seeds(schedule):
    data = training_data(benchmark("gmm1d"), 1000, 0)
    for seed in range(10):
        _, losses = train_dsm(data, schedule, MlpConfig(input_dim=1, hidden=(32, 32), epochs=6, seed=seed))
        assert losses[-1] < losses[0]


def test_training_is_reproducible(schedule):
    data = training_data(benchmark("gmm1d"), 512, 1)
    cfg = MlpConfig(input_dim=1, hidden=(16,), epochs=3, seed=4, dropout_rate=0.1)
    a, la = train_dsm(data, schedule, cfg)
    b, lb = train_dsm(data, schedule, cfg)
    assert np.array_equal(la, lb) and all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def test_single_point_learns_bayes_predictor(schedule):
    # Data at 0: the optimal predictor is x / sigma_t. Error is measured per
    # timestep as a norm ratio over the probe grid.
    cfg = MlpConfig(input_dim=1, hidden=(32, 32), epochs=600, learning_rate=0.1, seed=0)
    params, _ = train_dsm(np.zeros((4096, 1)), schedule, cfg)
    pred = MlpPredictor(params, cfg)
    for t in (100, 300, 500, 700, 900, 1000):
        s = schedule.sigma(t)
        x = s * np.linspace(-1.5, 1.5, 13)[:, None]
        target = x / s
        assert np.linalg.norm(pred.predict(x, t) - target) / np.linalg.norm(target) < 0.10


def test_mc_dropout(rng):
    cfg = MlpConfig(input_dim=2, hidden=(8, 8))
    p = init_params(cfg)
    x = rng.normal(size=(3, 2))
    _, var = mc_dropout_uncertainty(p, cfg, x, 5, 4, Streams(0, range(3)))
    assert np.array_equal(var, np.zeros((3, 2)))
    with pytest.raises(ConfigError):
        mc_dropout_uncertainty(p, cfg, x, 5, 1, Streams(0, range(3)))
    cfg = MlpConfig(input_dim=2, hidden=(8, 8), dropout_rate=0.2)
    _, var = mc_dropout_uncertainty(p, cfg, x, 5, 6, Streams(0, range(3)))
    assert np.all(var >= 0) and np.any(var > 0)


def test_config_validation():
    with pytest.raises(ConfigError):
        MlpConfig(input_dim=2, dropout_rate=1.0)
    with pytest.raises(ConfigError):
        init_params(MlpConfig(input_dim=2)).check(MlpConfig(input_dim=3))
