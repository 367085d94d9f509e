"""A small tanh MLP noise predictor with hand-written backprop and SGD training."""

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, NumericError
from .rng import Purpose, SingleStream, Streams, draw_uniform
from .uncertainty import UncertaintyMap, resolve_window, unbiased_variance


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden: tuple = (64, 64)
    time_features: int = 4
    dropout_rate: float = 0.0
    learning_rate: float = 0.05
    batch_size: int = 256
    epochs: int = 100
    seed: int = 0
    T: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden) or self.time_features < 0:
            raise ConfigError("MLP dimensions must be positive")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if self.batch_size < 1 or self.epochs < 0 or self.T < 1:
            raise ConfigError("batch_size and T must be positive, epochs nonnegative")

    @property
    def layer_sizes(self):
        return (self.input_dim + 2 * self.time_features,) + self.hidden + (self.input_dim,)

    def to_dict(self):
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass(eq=False)
class MlpParams:
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    def copy(self):
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def tensors(self):
        """Flat ``[(name, array)]`` list, weights then bias per layer."""
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"W{i}", w))
            out.append((f"b{i}", b))
        return out

    @classmethod
    def from_tensors(cls, tensors):
        arrays = [np.asarray(a, dtype=np.float64) for _, a in tensors]
        return cls(arrays[0::2], arrays[1::2])

    def check(self, config):
        sizes = config.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(self.weights):
            raise ConfigError("parameter layer count does not match config")
        for w, b, fan_in, fan_out in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ConfigError(f"layer shape {w.shape}/{b.shape} does not match ({fan_in}, {fan_out})")


def init_params(config, seed=None):
    """Glorot-normal hidden weights, zero biases, output layer scaled down."""
    seed = config.seed if seed is None else seed
    rng = Streams(seed, [(int(Purpose.TRAIN) << 40) | (1 << 39)])
    sizes = config.layer_sizes
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        if i == len(sizes) - 2:
            scale *= 0.1
        weights.append(rng.normal((fan_in, fan_out))[0] * scale)
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


def time_features(t, T, count):
    """Fourier features ``sin/cos(2^k * pi * t / T)`` for ``k < count``; shape (n, 2*count)."""
    s = np.atleast_1d(np.asarray(t, dtype=np.float64)) / T
    freqs = np.pi * 2.0 ** np.arange(count)
    ang = s[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def _inputs(config, x, t):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x.reshape(1, -1) if single else x
    if x2.ndim != 2 or x2.shape[1] != config.input_dim:
        raise ConfigError(f"expected inputs of dimension {config.input_dim}, got shape {x.shape}")
    feats = time_features(t, config.T, config.time_features)
    if feats.shape[0] == 1 and x2.shape[0] != 1:
        feats = np.broadcast_to(feats, (x2.shape[0], feats.shape[1]))
    elif feats.shape[0] != x2.shape[0]:
        raise ConfigError("per-row timesteps must match the batch size")
    return np.concatenate([x2, feats], axis=1), single


def _forward(params, config, h, dropout_draw):
    acts, masks = [h], []
    rate = config.dropout_rate
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = h @ w + b
        if i == n_layers - 1:
            return a, acts, masks
        h = np.tanh(a)
        if dropout_draw is not None and rate > 0.0:
            keep = draw_uniform(dropout_draw, h.shape) >= rate
            m = keep / (1.0 - rate)
            masks.append(m)
            acts.append(h)
            h = h * m
        else:
            masks.append(None)
            acts.append(h)
    raise ConfigError("network has no layers")


def mlp_forward(params, config, x, t, dropout_draw=None):
    """Predicted noise for ``x`` at timestep(s) ``t``.

    ``dropout_draw`` is a Streams or numpy Generator supplying dropout masks;
    without it dropout is off and the call is deterministic.
    """
    h, single = _inputs(config, x, t)
    out, _, _ = _forward(params, config, h, dropout_draw)
    return out[0] if single else out


def loss_and_grads(params, config, x, t, target, dropout_draw=None):
    """Mean squared error over all entries and its gradient w.r.t. every parameter."""
    h0, _ = _inputs(config, x, t)
    target = np.asarray(target, dtype=np.float64).reshape(h0.shape[0], config.input_dim)
    out, acts, masks = _forward(params, config, h0, dropout_draw)
    resid = out - target
    loss = float(np.mean(resid * resid))
    delta = 2.0 * resid / resid.size
    gw = [None] * len(params.weights)
    gb = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        h_in = acts[i] if i == 0 or masks[i - 1] is None else acts[i] * masks[i - 1]
        gw[i] = h_in.T @ delta
        gb[i] = delta.sum(axis=0)
        if i == 0:
            break
        dh = delta @ params.weights[i].T
        if masks[i - 1] is not None:
            dh = dh * masks[i - 1]
        delta = dh * (1.0 - acts[i] * acts[i])
    return loss, MlpParams(gw, gb)


def train_dsm(data, schedule, config):
    """Train with the denoising objective ``E|eps - eps_theta(x_t, t)|^2`` by plain SGD.

    Returns ``(params, losses)`` where ``losses`` holds the mean minibatch loss of
    each epoch. Deterministic for a fixed ``config.seed``.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if data.shape[0] == 0:
        raise ConfigError("training set is empty")
    if config.T != schedule.T:
        config = replace(config, T=schedule.T)
    params = init_params(config)
    rng = Streams(config.seed, [int(Purpose.TRAIN) << 40])
    flat = SingleStream(rng)
    n = data.shape[0]
    bs = min(config.batch_size, n)
    sq_ab = np.sqrt(schedule.alpha_bars)
    sig = schedule.sigmas
    losses = []
    for epoch in range(config.epochs):
        order = np.argsort(rng.uniform((n,))[0], kind="stable")
        total, count = 0.0, 0
        for start in range(0, n - bs + 1, bs):
            x0 = data[order[start:start + bs]]
            t = rng.integers(schedule.T, (bs,))[0] + 1
            eps = rng.normal((bs, config.input_dim))[0]
            xt = sq_ab[t - 1, None] * x0 + sig[t - 1, None] * eps
            drop = flat if config.dropout_rate > 0 else None
            loss, grads = loss_and_grads(params, config, xt, t, eps, drop)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch offset {start}")
            lr = config.learning_rate
            for p, g in zip(params.weights + params.biases, grads.weights + grads.biases):
                p -= lr * g
            total += loss
            count += 1
        losses.append(total / max(count, 1))
    return params, np.array(losses)


class MlpPredictor:
    """Deterministic (dropout-off) noise predictor backed by trained parameters."""

    def __init__(self, params, config):
        params.check(config)
        self.params = params
        self.config = config

    def predict(self, x, t):
        return mlp_forward(self.params, self.config, x, t)


def mc_dropout_uncertainty(params, config, x, t, K, rng):
    """Mean and unbiased per-component variance over ``K`` dropout forward passes."""
    if K < 2:
        raise ConfigError(f"MC-Dropout needs K >= 2 passes, got {K}")
    outs = np.stack([mlp_forward(params, config, x, t, dropout_draw=rng) for _ in range(K)])
    return outs.mean(axis=0), unbiased_variance(outs)


class McDropoutHook:
    """Sampler hook recording MC-Dropout variance maps under ``"uncertainty"``.

    Args:
        predictor: an MlpPredictor whose config has a positive dropout rate.
        K: stochastic passes per selected step.
        window: fractional step window, as for the re-noising estimator.
        steps: explicit step indices; overrides ``window`` when given.
    """

    key = "uncertainty"

    def __init__(self, predictor, K=5, window=(0.90, 0.96), steps=None):
        if predictor.config.dropout_rate <= 0.0:
            raise ConfigError("MC-Dropout needs a model with a positive dropout rate")
        self.predictor = predictor
        self.K = int(K)
        self.window = window
        self.steps = steps

    def __call__(self, ctx):
        steps = self.steps if self.steps is not None else resolve_window(self.window, ctx.config.plan)
        if ctx.index not in steps:
            return
        rng = ctx.streams(Purpose.DROPOUT)
        _, var = mc_dropout_uncertainty(self.predictor.params, self.predictor.config, ctx.x_t, ctx.t, self.K, rng)
        ctx.add_nfe(self.K)
        ctx.record(self.key, UncertaintyMap(ctx.t, var, None, self.K))
